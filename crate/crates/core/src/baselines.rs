//! Standalone chain-of-thought and program-of-thought baselines.
//!
//! These call the gateway and sandbox directly, without the executor, so they
//! serve as an independent reference for the scripted `[SG, AG]` and
//! `[PG, PV, PE, AG]` pipelines.

use crate::executor::Engine;
use crate::gateway::ChatRequest;
use crate::inventory::Backend;
use crate::modules::answer::normalize_answer;
use crate::modules::{sandbox, DEFAULT_SANDBOX_PROFILE};
use crate::plan::{PROGRAM_GENERATOR, SOLUTION_GENERATOR};
use crate::text::strip_code_fences;
use crate::types::{Answer, Cache, Query};
use serde::{Deserialize, Serialize};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Cot,
    Pot,
}

impl FromStr for BaselineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cot" => Ok(BaselineKind::Cot),
            "pot" => Ok(BaselineKind::Pot),
            other => Err(format!("unknown baseline {other:?} (expected cot or pot)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRun {
    pub answer: Answer,
    pub request_digests: Vec<String>,
    pub completion: String,
}

fn request_for(engine: &Engine, module: &str, q: &Query) -> Result<ChatRequest, String> {
    let spec = engine.inventory.get(module).ok_or_else(|| format!("{module} is not in the inventory"))?;
    let Backend::LlmPrompted { template, demos, max_tokens, temperature, .. } = &spec.backend else {
        return Err(format!("{module} is not LLM-prompted"));
    };
    let template = engine.templates.get(template).map_err(|e| e.to_string())?;
    let prompt = template.render(*demos, q, &Cache::new()).map_err(|e| e.to_string())?;
    Ok(ChatRequest::new(&engine.model_id, prompt).with_max_tokens(*max_tokens).with_temperature(*temperature))
}

pub fn run_baseline(engine: &Engine, kind: BaselineKind, q: &Query) -> BaselineRun {
    let module = match kind {
        BaselineKind::Cot => SOLUTION_GENERATOR,
        BaselineKind::Pot => PROGRAM_GENERATOR,
    };
    let failed = |digests: Vec<String>, completion: String| BaselineRun {
        answer: Answer::sentinel(),
        request_digests: digests,
        completion,
    };
    let req = match request_for(engine, module, q) {
        Ok(r) => r,
        Err(e) => {
            tracing::warn!(query = %q.id, "baseline request not built: {e}");
            return failed(Vec::new(), String::new());
        }
    };
    let digest = req.digest();
    let text = match engine.gateway.complete(&req) {
        Ok(ex) => ex.text,
        Err(_) => return failed(vec![digest], String::new()),
    };
    let answer = match kind {
        BaselineKind::Cot => normalize_answer(q, &text, true),
        BaselineKind::Pot => {
            let program = strip_code_fences(&text);
            let Some(profile) = engine.sandbox.get(DEFAULT_SANDBOX_PROFILE) else {
                return failed(vec![digest], text);
            };
            let verified = sandbox::verify(&program, profile).is_ok_and(|v| v.ok);
            match verified.then(|| sandbox::execute(&program, profile)) {
                Some(Ok(result)) => normalize_answer(q, &result, false),
                _ => Answer::sentinel(),
            }
        }
    };
    BaselineRun { answer, request_digests: vec![digest], completion: text }
}
