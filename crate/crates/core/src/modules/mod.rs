//! Built-in module implementations and the per-backend dispatcher.

pub mod adapters;
pub mod answer;
pub mod lookup;
pub mod prompt;
pub mod rules;
pub mod sandbox;

use crate::gateway::{ChatRequest, Gateway};
use crate::inventory::{Backend, ModuleSpec, OutputKind, SandboxAction};
use crate::text::strip_code_fences;
use crate::types::{
    Cache, CacheEntry, CacheKey, CacheValue, FailureReason, Flag, InputUpdate, ModuleOutput, Payload, Query,
};
use adapters::Adapters;
use lookup::{accept_lookup, Axis};
use prompt::{PromptError, TemplateSet};
use rules::RuleRegistry;
use sandbox::{SandboxError, SandboxProfile};
use std::collections::BTreeMap;

pub const DEFAULT_SANDBOX_PROFILE: &str = "python";

/// Everything one module invocation may read.
pub struct ModuleContext<'a> {
    pub spec: &'a ModuleSpec,
    pub query: &'a Query,
    pub cache: &'a Cache,
    pub step_index: usize,
    pub gateway: &'a Gateway,
    pub templates: &'a TemplateSet,
    pub model_id: &'a str,
    pub adapters: &'a Adapters,
    pub sandbox: &'a BTreeMap<String, SandboxProfile>,
    pub rules: &'a RuleRegistry,
    /// Extra labeled blocks appended to the test block (e.g. verifier feedback).
    pub extras: &'a [(String, String)],
}

impl ModuleContext<'_> {
    fn entry(&self, key: CacheKey, value: CacheValue) -> CacheEntry {
        CacheEntry::new(key, value, &self.spec.name, self.step_index)
    }

    fn ok(&self, payload: Payload) -> ModuleOutput {
        ModuleOutput::ok(&self.spec.name, payload)
    }

    fn failed(&self, reason: FailureReason) -> ModuleOutput {
        ModuleOutput::failed(&self.spec.name, reason)
    }

    fn identity(&self, flag: Flag) -> ModuleOutput {
        let payload = self.query.table.as_ref().map(|t| t.serialize()).unwrap_or_default();
        self.ok(Payload::Text(payload)).flag(flag)
    }
}

/// Routes to the implementation for the module's backend kind.
pub fn dispatch(ctx: &ModuleContext<'_>) -> ModuleOutput {
    if let Some(gate) = &ctx.spec.gating {
        match &ctx.query.table {
            None => return ctx.failed(FailureReason::MissingTable),
            Some(t) if !gate.admits(t) => return ctx.identity(Flag::Gated),
            Some(_) => {}
        }
    }
    match &ctx.spec.backend {
        Backend::LlmPrompted { template, demos, max_tokens, temperature, output } => {
            run_llm(ctx, template, *demos, *max_tokens, *temperature, *output)
        }
        Backend::HttpTool { adapter } => run_http(ctx, adapter),
        Backend::Subprocess { profile, action } => run_subprocess(ctx, profile, *action),
        Backend::RuleBased { rule, .. } => match ctx.rules.get(rule) {
            Some(f) => f(ctx),
            None => ctx.failed(FailureReason::UnknownBackend(format!("no rule registered as {rule:?}"))),
        },
    }
}

fn run_llm(
    ctx: &ModuleContext<'_>,
    template_id: &str,
    demos: usize,
    max_tokens: u32,
    temperature: f64,
    output: OutputKind,
) -> ModuleOutput {
    let lookup_axis = match output {
        OutputKind::RowSubtable => Some(Axis::Rows),
        OutputKind::ColumnSubtable => Some(Axis::Columns),
        _ => None,
    };
    if lookup_axis.is_some() && ctx.query.table.is_none() {
        return ctx.failed(FailureReason::MissingTable);
    }
    let template = match ctx.templates.get(template_id) {
        Ok(t) => t,
        Err(e) => return ctx.failed(FailureReason::UnknownBackend(e.to_string())),
    };
    let prompt = match template.render_with(&template.instruction, &template.demos, demos, ctx.query, ctx.cache, ctx.extras) {
        Ok(p) => p,
        Err(PromptError::MissingRequiredField { label, .. }) => {
            return ctx.failed(FailureReason::MissingRequiredField(label.trim_end_matches(':').to_string()))
        }
        Err(e) => return ctx.failed(FailureReason::UnknownBackend(e.to_string())),
    };
    let req = ChatRequest::new(ctx.model_id, prompt).with_max_tokens(max_tokens).with_temperature(temperature);
    let ex = match ctx.gateway.complete(&req) {
        Ok(ex) => ex,
        Err(e) => return ctx.failed(FailureReason::Gateway(e.to_string())).digests([req.digest()]),
    };
    let mut out = ctx.ok(Payload::Text(String::new())).digests([ex.digest.clone()]);
    if ex.replay_miss {
        out = out.flag(Flag::ReplayMiss);
    }
    match lookup_axis {
        Some(axis) => {
            let original = ctx.query.table.as_ref().expect("checked above");
            match accept_lookup(&ex.text, original, axis) {
                Ok(table) => {
                    out.payload = Payload::Text(table.serialize());
                    out.update(InputUpdate::Table { table })
                }
                Err(rejection) => {
                    tracing::debug!(module = %ctx.spec.name, ?rejection, "lookup output rejected; keeping the original table");
                    out.payload = Payload::Text(original.serialize());
                    out.flag(Flag::LookupParseFailure)
                }
            }
        }
        None => {
            let text = match output {
                OutputKind::Program => strip_code_fences(&ex.text),
                _ => ex.text.trim().to_string(),
            };
            out.payload = Payload::Text(text.clone());
            match ctx.spec.produces.first() {
                Some(&key) => out.write(ctx.entry(key, CacheValue::text(text))),
                None => out,
            }
        }
    }
}

fn run_http(ctx: &ModuleContext<'_>, adapter: &str) -> ModuleOutput {
    let key = |default: CacheKey| ctx.spec.produces.first().copied().unwrap_or(default);
    match adapter {
        adapters::CAPTION_ADAPTER | adapters::OCR_ADAPTER => {
            let Some(image) = ctx.query.image_ref.as_deref() else {
                return ctx.failed(FailureReason::MissingImage);
            };
            if adapter == adapters::CAPTION_ADAPTER {
                match ctx.adapters.caption(ctx.gateway, image) {
                    Ok(r) => ctx
                        .ok(Payload::Text(r.value.clone()))
                        .write(ctx.entry(key(CacheKey::ImageCaption), CacheValue::text(r.value)))
                        .digests([r.digest]),
                    Err(e) => ctx.failed(e.into()),
                }
            } else {
                match ctx.adapters.detect_text(ctx.gateway, image) {
                    Ok(r) => {
                        let value = CacheValue::DetectedText { items: r.value };
                        ctx.ok(Payload::Text(value.render()))
                            .write(ctx.entry(key(CacheKey::DetectedText), value))
                            .digests([r.digest])
                    }
                    Err(e) => ctx.failed(e.into()),
                }
            }
        }
        adapters::SEARCH_ADAPTER => {
            let from_cache = ctx.cache.latest_text(CacheKey::SearchQuery).map(str::trim).filter(|s| !s.is_empty());
            let query = from_cache.unwrap_or(ctx.query.question.trim()).to_string();
            match ctx.adapters.search(ctx.gateway, &query) {
                Ok(r) => {
                    let value = CacheValue::Passages { passages: r.value };
                    let mut out = ctx
                        .ok(Payload::Text(value.render()))
                        .write(ctx.entry(key(CacheKey::SearchResponse), value.clone()))
                        .digests([r.digest]);
                    if from_cache.is_none() {
                        out = out.flag(Flag::SearchQueryFromQuestion);
                    }
                    if matches!(&value, CacheValue::Passages { passages } if passages.is_empty()) {
                        out = out.flag(Flag::EmptySearchResult);
                    }
                    out
                }
                Err(e) => ctx.failed(e.into()),
            }
        }
        other => ctx.failed(FailureReason::UnknownBackend(format!("no HTTP adapter {other:?}"))),
    }
}

fn sandbox_failure(e: SandboxError) -> FailureReason {
    match e {
        SandboxError::Unavailable(s) => FailureReason::SandboxUnavailable(s),
        SandboxError::InvalidProfile(s) => FailureReason::SandboxUnavailable(s),
        SandboxError::Timeout => FailureReason::Timeout,
        SandboxError::RuntimeFault(s) => FailureReason::RuntimeFault(s),
        SandboxError::NoResultVariable => FailureReason::NoResultVariable,
    }
}

fn run_subprocess(ctx: &ModuleContext<'_>, profile_id: &str, action: SandboxAction) -> ModuleOutput {
    let Some(profile) = ctx.sandbox.get(profile_id) else {
        return ctx.failed(FailureReason::UnknownBackend(format!("no sandbox profile {profile_id:?}")));
    };
    let Some(program) = ctx.cache.latest(CacheKey::GeneratedProgram) else {
        let out = ctx.failed(FailureReason::MissingProgram);
        return if action == SandboxAction::Execute { out.flag(Flag::ExecutorWithoutGenerator) } else { out };
    };
    let source = program.value.render();
    match action {
        SandboxAction::Verify => match sandbox::verify(&source, profile) {
            Ok(v) => {
                let out = ctx
                    .ok(Payload::Text(if v.ok { "True".into() } else { format!("False: {}", v.diagnostics) }))
                    .write(ctx.entry(
                        ctx.spec.produces.first().copied().unwrap_or(CacheKey::ProgramVerdict),
                        CacheValue::Verdict { ok: v.ok, diagnostics: v.diagnostics },
                    ));
                if v.ok {
                    out
                } else {
                    out.flag(Flag::VerifierRejected)
                }
            }
            Err(e) => ctx.failed(sandbox_failure(e)),
        },
        SandboxAction::Execute => {
            // A verdict only speaks for the program it verified.
            let rejected = ctx.cache.latest(CacheKey::ProgramVerdict).is_some_and(|v| {
                v.step_index >= program.step_index && matches!(v.value, CacheValue::Verdict { ok: false, .. })
            });
            if rejected {
                return ctx.failed(FailureReason::VerifierRejected).flag(Flag::VerifierRejected);
            }
            match sandbox::execute(&source, profile) {
                Ok(result) => ctx
                    .ok(Payload::Text(result.clone()))
                    .write(ctx.entry(
                        ctx.spec.produces.first().copied().unwrap_or(CacheKey::ExecutionResult),
                        CacheValue::text(result),
                    )),
                Err(e) => ctx.failed(sandbox_failure(e)),
            }
        }
    }
}

pub fn default_sandbox_profiles() -> BTreeMap<String, SandboxProfile> {
    BTreeMap::from([(DEFAULT_SANDBOX_PROFILE.to_string(), SandboxProfile::default())])
}
