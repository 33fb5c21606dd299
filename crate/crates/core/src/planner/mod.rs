//! The LLM-prompted policy that maps a query to a plan.

use crate::gateway::{ChatRequest, Gateway};
use crate::inventory::{planner_descriptions, Inventory};
use crate::modules::prompt::{PromptError, TemplateSet};
use crate::plan::{parse_plan, resolve_plan, ConstraintSet, FallbackProgram, FallbackReason};
use crate::types::{Cache, Flag, Plan, Query, Task};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

pub const DEFAULT_PLANNER_MODEL: &str = "gpt-4";
const MODULES_PLACEHOLDER: &str = "{modules}";

fn default_max_tokens() -> u32 {
    128
}

fn default_stop() -> Vec<String> {
    vec!["\n\n".to_string()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub task: Task,
    #[serde(default = "default_model")]
    pub model_id: String,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_stop")]
    pub stop: Vec<String>,
    /// Template holding the instruction (with a `{modules}` slot), fields and demonstrations.
    pub template_id: String,
    /// Cap on demonstrations; `None` uses every shipped exemplar.
    #[serde(default)]
    pub demo_count: Option<usize>,
    /// Modules removed from the description block, with demonstrations that use them.
    #[serde(default)]
    pub hidden: BTreeSet<String>,
}

fn default_model() -> String {
    DEFAULT_PLANNER_MODEL.to_string()
}

impl PlannerConfig {
    pub fn for_task(task: Task) -> Self {
        PlannerConfig {
            task,
            model_id: default_model(),
            max_tokens: default_max_tokens(),
            temperature: 0.0,
            stop: default_stop(),
            template_id: format!("{}/planner", task.as_str()),
            demo_count: None,
            hidden: BTreeSet::new(),
        }
    }

    pub fn with_model(mut self, model_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self
    }

    pub fn hiding<I, S>(mut self, names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.hidden.extend(names.into_iter().map(Into::into));
        self
    }
}

/// The module list a demonstration maps to: the bracketed text after its last `Modules:`.
pub fn demo_plan(demo: &str) -> Option<Vec<String>> {
    let tail = &demo[demo.rfind("Modules:")? + "Modules:".len()..];
    let start = tail.find('[')?;
    let end = start + tail[start..].find(']')?;
    Some(
        tail[start + 1..end]
            .split(',')
            .map(|t| t.trim().trim_matches(|c: char| c == '"' || c == '\'').to_string())
            .filter(|t| !t.is_empty())
            .collect(),
    )
}

/// Demonstrations visible under `cfg`: those not mentioning a hidden module.
pub fn visible_demos<'a>(cfg: &PlannerConfig, demos: &'a [String]) -> Vec<&'a String> {
    demos
        .iter()
        .filter(|d| demo_plan(d).is_none_or(|plan| !plan.iter().any(|m| cfg.hidden.contains(m))))
        .take(cfg.demo_count.unwrap_or(usize::MAX))
        .collect()
}

/// Instruction with module descriptions, the demonstrations, then the test query ending at `Modules:`.
pub fn build_planner_prompt(
    cfg: &PlannerConfig,
    inv: &Inventory,
    templates: &TemplateSet,
    q: &Query,
) -> Result<String, PromptError> {
    let template = templates.get(&cfg.template_id)?;
    let hidden: Vec<&String> = cfg.hidden.iter().collect();
    let visible = inv.without(&hidden);
    let instruction = template.instruction.replace(MODULES_PLACEHOLDER, &planner_descriptions(&visible));
    let demos: Vec<String> = visible_demos(cfg, &template.demos).into_iter().cloned().collect();
    if demos.is_empty() {
        tracing::warn!(task = %cfg.task, "every planner demonstration was filtered out");
    }
    template.render_with(&instruction, &demos, demos.len(), q, &Cache::new(), &[])
}

/// A resolved plan with provenance for the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanOutcome {
    pub plan: Plan,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_reason: Option<FallbackReason>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<Flag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_digest: Option<String>,
}

impl PlanOutcome {
    /// A plan given by the caller, bypassing the planner.
    pub fn scripted(plan: Plan) -> Self {
        PlanOutcome { plan, fallback_reason: None, flags: Vec::new(), request_digest: None }
    }
}

fn unavailable(task: Task, why: String, flags: Vec<Flag>, digest: Option<String>) -> PlanOutcome {
    PlanOutcome {
        plan: FallbackProgram::for_task(task).to_plan(),
        fallback_reason: Some(FallbackReason::PlannerUnavailable(why)),
        flags,
        request_digest: digest,
    }
}

/// Prompts the planner and resolves its completion. Never fails: every error becomes the fallback.
pub fn plan(cfg: &PlannerConfig, gateway: &Gateway, inv: &Inventory, templates: &TemplateSet, q: &Query) -> PlanOutcome {
    let prompt = match build_planner_prompt(cfg, inv, templates, q) {
        Ok(p) => p,
        Err(e) => return unavailable(cfg.task, e.to_string(), vec![Flag::PlannerUnavailable], None),
    };
    let req = ChatRequest::new(&cfg.model_id, prompt)
        .with_max_tokens(cfg.max_tokens)
        .with_temperature(cfg.temperature)
        .with_stop(cfg.stop.clone());
    let digest = req.digest();
    let ex = match gateway.complete(&req) {
        Ok(ex) => ex,
        Err(e) => return unavailable(cfg.task, e.to_string(), vec![Flag::PlannerUnavailable], Some(digest)),
    };
    if ex.replay_miss {
        return unavailable(
            cfg.task,
            format!("no cassette record for {}", ex.digest),
            vec![Flag::PlannerUnavailable, Flag::ReplayMiss],
            Some(digest),
        );
    }
    // Residual mentions of hidden modules still parse; the executor skips them.
    let names = inv.name_list();
    let resolved = resolve_plan(
        parse_plan(&ex.text, &names),
        &ConstraintSet::for_task(cfg.task),
        &FallbackProgram::for_task(cfg.task),
    );
    let mut plan = resolved.plan;
    plan.raw_planner_text = Some(ex.text);
    PlanOutcome { plan, fallback_reason: resolved.fallback_reason, flags: Vec::new(), request_digest: Some(digest) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Cassette;
    use crate::inventory::inventory_for_task;
    use crate::plan::validate_plan;
    use crate::types::{parse_table, PlanSource};
    use std::sync::Arc;

    fn scripted(reply: &'static str) -> Gateway {
        Gateway::live(Arc::new(move |_: &ChatRequest| Ok::<_, crate::gateway::GatewayError>(reply.to_string())))
    }

    fn sqa_query() -> Query {
        Query::new("7", Task::ScienceQA, "Which animal's feet are also adapted for grabbing prey?")
            .with_options(["thick-billed parrot", "bald eagle"])
            .with_image("7.png")
            .with_meta("pid", "7")
            .with_meta("has_image", "True")
    }

    #[test]
    fn scienceqa_prompt_layout() {
        let cfg = PlannerConfig::for_task(Task::ScienceQA);
        let p = build_planner_prompt(&cfg, &inventory_for_task(Task::ScienceQA), &TemplateSet::shipped(), &sqa_query()).unwrap();
        assert!(p.starts_with("You need to act as a policy model"));
        assert!(p.contains("Compare the average kinetic energies"));
        assert!(p.contains(r#"Modules: ["Text_Detector", "Knowledge_Retrieval", "Solution_Generator", "Answer_Generator"]"#));
        assert!(p.contains("Image_Captioner: "));
        assert!(!p.contains(MODULES_PLACEHOLDER));
        assert!(p.ends_with("Metadata: {'pid': 7, 'has_image': True}\n\nModules:"), "{p}");
        assert!(p.find("Below are some examples").unwrap() < p.find("Compare the average").unwrap());
    }

    #[test]
    fn tabmwp_prompt_has_designer_watch_demo() {
        let cfg = PlannerConfig::for_task(Task::TabMWP);
        let q = Query::new("1", Task::TabMWP, "How many?").with_table(parse_table("a | b\n1 | 2").unwrap());
        let p = build_planner_prompt(&cfg, &inventory_for_task(Task::TabMWP), &TemplateSet::shipped(), &q).unwrap();
        assert!(p.contains("How much more does a designer watch cost than a designer coat?"));
        assert!(p.contains(r#"["Program_Generator", "Program_Verifier", "Program_Executor", "Answer_Generator"]"#));
        assert!(p.ends_with("Table:\na | b\n1 | 2\n\nQuestion: How many?\n\nModules:"), "{p}");
    }

    #[test]
    fn absent_table_is_elided() {
        let cfg = PlannerConfig::for_task(Task::TabMWP);
        let q = Query::new("1", Task::TabMWP, "How many?");
        let p = build_planner_prompt(&cfg, &inventory_for_task(Task::TabMWP), &TemplateSet::shipped(), &q).unwrap();
        assert!(p.ends_with("Question: How many?\n\nModules:"));
    }

    #[test]
    fn prompt_is_stable() {
        let cfg = PlannerConfig::for_task(Task::ScienceQA);
        let inv = inventory_for_task(Task::ScienceQA);
        let t = TemplateSet::shipped();
        assert_eq!(build_planner_prompt(&cfg, &inv, &t, &sqa_query()), build_planner_prompt(&cfg, &inv, &t, &sqa_query()));
    }

    #[test]
    fn shipped_demo_plans_satisfy_constraints() {
        let t = TemplateSet::shipped();
        for task in [Task::ScienceQA, Task::TabMWP] {
            let cfg = PlannerConfig::for_task(task);
            let demos = &t.get(&cfg.template_id).unwrap().demos;
            assert!(!demos.is_empty());
            for d in demos {
                let plan = Plan::new(demo_plan(d).unwrap(), PlanSource::Planner);
                assert!(validate_plan(&plan, &ConstraintSet::for_task(task)).is_valid(), "{plan:?}");
            }
        }
    }

    #[test]
    fn hidden_modules_leave_descriptions_and_demos() {
        let cfg = PlannerConfig::for_task(Task::ScienceQA).hiding(["Text_Detector"]);
        let p = build_planner_prompt(&cfg, &inventory_for_task(Task::ScienceQA), &TemplateSet::shipped(), &sqa_query()).unwrap();
        assert!(!p.contains("Text_Detector: "));
        assert!(!p.contains("Compare the average kinetic energies"));
        let cfg = PlannerConfig::for_task(Task::ScienceQA).hiding(["Bing_Search"]);
        let p = build_planner_prompt(&cfg, &inventory_for_task(Task::ScienceQA), &TemplateSet::shipped(), &sqa_query()).unwrap();
        assert!(!p.contains("Bing_Search:"));
        assert!(p.contains("Compare the average kinetic energies"));
    }

    #[test]
    fn planner_completion_becomes_plan() {
        let gw = scripted(r#"["Image_Captioner", "Knowledge_Retrieval", "Solution_Generator", "Answer_Generator"]"#);
        let cfg = PlannerConfig::for_task(Task::ScienceQA);
        let out = plan(&cfg, &gw, &inventory_for_task(Task::ScienceQA), &TemplateSet::shipped(), &sqa_query());
        assert_eq!(out.plan.source, PlanSource::Planner);
        assert_eq!(out.plan.modules, ["Image_Captioner", "Knowledge_Retrieval", "Solution_Generator", "Answer_Generator"]);
        assert!(out.fallback_reason.is_none());
    }

    #[test]
    fn refusal_falls_back() {
        let gw = scripted("I cannot help with that.");
        let cfg = PlannerConfig::for_task(Task::ScienceQA);
        let out = plan(&cfg, &gw, &inventory_for_task(Task::ScienceQA), &TemplateSet::shipped(), &sqa_query());
        assert_eq!(out.plan.source, PlanSource::Fallback);
        assert_eq!(out.plan.modules, ["Solution_Generator", "Answer_Generator"]);
        assert_eq!(out.plan.raw_planner_text.as_deref(), Some("I cannot help with that."));
    }

    #[test]
    fn lenient_replay_miss_is_unavailable() {
        let gw = Gateway::replay(Cassette::in_memory(), false);
        let cfg = PlannerConfig::for_task(Task::TabMWP);
        let out = plan(&cfg, &gw, &inventory_for_task(Task::TabMWP), &TemplateSet::shipped(), &Query::new("1", Task::TabMWP, "q"));
        assert_eq!(out.plan.modules, FallbackProgram::for_task(Task::TabMWP).modules);
        assert!(out.flags.contains(&Flag::PlannerUnavailable));
        assert!(matches!(out.fallback_reason, Some(FallbackReason::PlannerUnavailable(_))));
    }

    #[test]
    fn strict_replay_miss_is_unavailable_too() {
        let gw = Gateway::replay(Cassette::in_memory(), true);
        let cfg = PlannerConfig::for_task(Task::ScienceQA);
        let out = plan(&cfg, &gw, &inventory_for_task(Task::ScienceQA), &TemplateSet::shipped(), &sqa_query());
        assert_eq!(out.plan.source, PlanSource::Fallback);
        assert_eq!(out.flags, [Flag::PlannerUnavailable]);
    }

    #[test]
    fn request_uses_planner_settings() {
        let seen = Arc::new(std::sync::Mutex::new(None));
        let s = seen.clone();
        let gw = Gateway::live(Arc::new(move |r: &ChatRequest| {
            *s.lock().unwrap() = Some((r.max_tokens, r.temperature, r.stop.clone(), r.model_id.clone()));
            Ok::<_, crate::gateway::GatewayError>("[\"Solution_Generator\", \"Answer_Generator\"]".into())
        }));
        let cfg = PlannerConfig::for_task(Task::ScienceQA);
        plan(&cfg, &gw, &inventory_for_task(Task::ScienceQA), &TemplateSet::shipped(), &sqa_query());
        assert_eq!(seen.lock().unwrap().clone().unwrap(), (128, 0.0, vec!["\n\n".to_string()], "gpt-4".to_string()));
    }
}
