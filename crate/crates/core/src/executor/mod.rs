//! Sequential plan execution over the (query, cache) state.

pub mod trace;

use crate::gateway::Gateway;
use crate::inventory::{Inventory, ModuleSpec};
use crate::modules::adapters::Adapters;
use crate::modules::answer::normalize_answer;
use crate::modules::prompt::TemplateSet;
use crate::modules::rules::RuleRegistry;
use crate::modules::sandbox::SandboxProfile;
use crate::modules::{default_sandbox_profiles, dispatch, ModuleContext};
use crate::planner::{self, PlanOutcome, PlannerConfig};
use crate::types::{Answer, Cache, FailureReason, Flag, ModuleOutput, Payload, Query, Status};
use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};
pub use trace::{read_traces, write_traces, ExecutionTrace, StepRecord, TraceError, TRACE_VERSION};

pub const DEFAULT_MODULE_MODEL: &str = "gpt-4";
pub const DEFAULT_STEP_BUDGET: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq)]
pub struct ExecOptions {
    /// Modules ablated for this run.
    pub disabled: BTreeSet<String>,
    /// Remove disabled modules from the planner prompt.
    pub hide_disabled: bool,
    /// Run planned occurrences of disabled modules as identity.
    pub skip_disabled: bool,
    /// Per-step wall-clock budget; `None` disables the check.
    pub step_budget: Option<Duration>,
    /// Store full query and cache snapshots in each step record.
    pub full_trace: bool,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            disabled: BTreeSet::new(),
            hide_disabled: true,
            skip_disabled: true,
            step_budget: Some(DEFAULT_STEP_BUDGET),
            full_trace: false,
        }
    }
}

/// Everything a run needs. Shared immutably across concurrent runs.
pub struct Engine {
    pub inventory: Inventory,
    pub templates: TemplateSet,
    pub gateway: Gateway,
    pub model_id: String,
    pub adapters: Adapters,
    pub sandbox: BTreeMap<String, SandboxProfile>,
    pub rules: RuleRegistry,
    pub planner: PlannerConfig,
    pub options: ExecOptions,
}

impl Engine {
    pub fn new(inventory: Inventory, gateway: Gateway) -> Self {
        let options = ExecOptions {
            // Replay is pure lookup; wall-clock budgets would only add nondeterminism.
            step_budget: if gateway.is_replay() { None } else { Some(DEFAULT_STEP_BUDGET) },
            ..ExecOptions::default()
        };
        Engine {
            planner: PlannerConfig::for_task(inventory.task),
            inventory,
            templates: TemplateSet::shipped(),
            gateway,
            model_id: DEFAULT_MODULE_MODEL.to_string(),
            adapters: Adapters::default(),
            sandbox: default_sandbox_profiles(),
            rules: RuleRegistry::default(),
            options,
        }
    }

    pub fn with_templates(mut self, templates: TemplateSet) -> Self {
        self.templates = templates;
        self
    }

    pub fn with_adapters(mut self, adapters: Adapters) -> Self {
        self.adapters = adapters;
        self
    }

    pub fn with_rules(mut self, rules: RuleRegistry) -> Self {
        self.rules = rules;
        self
    }

    pub fn with_options(mut self, options: ExecOptions) -> Self {
        self.options = options;
        self
    }

    pub fn with_sandbox_profile(mut self, id: impl Into<String>, profile: SandboxProfile) -> Self {
        self.sandbox.insert(id.into(), profile);
        self
    }

    pub fn with_planner(mut self, planner: PlannerConfig) -> Self {
        self.planner = planner;
        self
    }

    pub fn disable<I, S>(mut self, names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.options.disabled.extend(names.into_iter().map(Into::into));
        self
    }

    /// Runs the planner, honoring ablation settings.
    pub fn plan(&self, q: &Query) -> PlanOutcome {
        let mut cfg = self.planner.clone();
        if self.options.hide_disabled {
            cfg.hidden.extend(self.options.disabled.iter().cloned());
        }
        planner::plan(&cfg, &self.gateway, &self.inventory, &self.templates, q)
    }

    /// Plans then executes.
    pub fn solve(&self, q: &Query) -> (Answer, ExecutionTrace) {
        let outcome = self.plan(q);
        self.execute(q, &outcome)
    }

    pub fn execute(&self, q0: &Query, outcome: &PlanOutcome) -> (Answer, ExecutionTrace) {
        self.execute_with_hook(q0, outcome, |_, out| out)
    }

    /// Like [`Engine::execute`], with `hook` allowed to replace each step's output
    /// before it is applied (fault injection).
    pub fn execute_with_hook<F>(&self, q0: &Query, outcome: &PlanOutcome, mut hook: F) -> (Answer, ExecutionTrace)
    where
        F: FnMut(usize, ModuleOutput) -> ModuleOutput,
    {
        let started_at = now();
        let mut q = q0.clone();
        let mut cache = Cache::new();
        let mut steps = Vec::with_capacity(outcome.plan.len());
        let mut last: Option<(ModuleOutput, bool)> = None;

        for (i, name) in outcome.plan.modules.iter().enumerate() {
            let t0 = Instant::now();
            let spec = self.inventory.get(name);
            let out = match spec {
                None => ModuleOutput::failed(name, FailureReason::UnknownBackend(format!("{name:?} is not in the inventory"))),
                Some(_) if self.options.skip_disabled && self.options.disabled.contains(name) => {
                    ModuleOutput::ok(name, Payload::Text(String::new())).flag(Flag::DisabledSkipped)
                }
                Some(spec) => {
                    let ctx = ModuleContext {
                        spec,
                        query: &q,
                        cache: &cache,
                        step_index: i,
                        gateway: &self.gateway,
                        templates: &self.templates,
                        model_id: &self.model_id,
                        adapters: &self.adapters,
                        sandbox: &self.sandbox,
                        rules: &self.rules,
                        extras: &[],
                    };
                    check_contract(spec, dispatch(&ctx))
                }
            };
            let mut out = hook(i, out);
            let elapsed = t0.elapsed();
            if let Some(budget) = self.options.step_budget {
                if elapsed > budget && out.status.is_ok() {
                    out = out.into_failed(FailureReason::StepBudgetExceeded).flag(Flag::StepBudgetExceeded);
                }
            }
            if out.status.is_ok() {
                for u in &out.input_updates {
                    u.apply(&mut q);
                }
                let writes = std::mem::take(&mut out.cache_writes);
                for e in &writes {
                    if cache.contains(e.key) {
                        out = out.flag(Flag::ShadowedCacheEntry(e.key));
                    }
                }
                for e in writes.iter().cloned() {
                    cache.put(e);
                }
                out.cache_writes = writes;
            } else {
                out.cache_writes.clear();
                out.input_updates.clear();
            }
            let mut record = StepRecord::from_output(i, &out, elapsed.as_millis() as u64, &q);
            if !out.input_updates.is_empty() {
                record.table_after = q.table.as_ref().map(|t| t.serialize());
            }
            if self.options.full_trace {
                record.query_snapshot = Some(q.clone());
                record.cache_snapshot = Some(cache.entries().to_vec());
            }
            tracing::debug!(step = i, module = %name, status = ?out.status, "step finished");
            steps.push(record);
            last = Some((out, spec.is_some_and(|s| s.terminal)));
        }

        let (final_answer, answer_flags) = final_answer(&q, last);
        let trace = ExecutionTrace {
            trace_version: TRACE_VERSION,
            query_id: q0.id.clone(),
            task: q0.task,
            plan: outcome.plan.clone(),
            fallback_reason: outcome.fallback_reason.clone(),
            plan_flags: outcome.flags.clone(),
            planner_digest: outcome.request_digest.clone(),
            initial_query_digest: q0.digest(),
            steps,
            final_answer: final_answer.clone(),
            answer_flags,
            started_at,
            finished_at: now(),
        };
        (final_answer, trace)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// The terminal module's answer; any other last step has its payload coerced.
fn final_answer(q: &Query, last: Option<(ModuleOutput, bool)>) -> (Answer, Vec<Flag>) {
    match last {
        None => (Answer::sentinel(), Vec::new()),
        Some((out, _)) if out.status != Status::Ok => (Answer::sentinel(), Vec::new()),
        Some((out, true)) => match out.payload {
            Payload::Answer(a) => (a, Vec::new()),
            Payload::Text(t) => (normalize_answer(q, &t, true), vec![Flag::AnswerCoerced]),
        },
        Some((out, false)) => {
            let a = match out.payload {
                Payload::Answer(a) => a,
                Payload::Text(t) => normalize_answer(q, &t, true),
            };
            (a, vec![Flag::AnswerCoerced])
        }
    }
}

/// Rejects outputs whose writes or updates fall outside the spec's declared effects.
pub fn check_contract(spec: &ModuleSpec, out: ModuleOutput) -> ModuleOutput {
    if let Some(bad) = out.cache_writes.iter().find(|e| !spec.produces.contains(&e.key)) {
        let why = format!("{} wrote undeclared cache key {}", spec.name, bad.key.as_str());
        return out.into_failed(FailureReason::ContractViolation(why));
    }
    if let Some(bad) = out.input_updates.iter().find(|u| spec.input_effect != Some(u.field())) {
        let why = format!("{} updated undeclared query field {:?}", spec.name, bad.field());
        return out.into_failed(FailureReason::ContractViolation(why));
    }
    out
}
