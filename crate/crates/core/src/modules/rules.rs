//! Registry of rule-based (pure Rust) module implementations.

use super::answer::generate_answer;
use super::ModuleContext;
use crate::inventory::{Backend, StateRef};
use crate::types::{CacheEntry, CacheValue, ModuleOutput, Payload, QueryField};
use std::collections::BTreeMap;
use std::sync::Arc;

pub type RuleFn = Arc<dyn Fn(&ModuleContext<'_>) -> ModuleOutput + Send + Sync>;

#[derive(Clone)]
pub struct RuleRegistry {
    rules: BTreeMap<String, RuleFn>,
}

impl std::fmt::Debug for RuleRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.rules.keys()).finish()
    }
}

impl Default for RuleRegistry {
    fn default() -> Self {
        let mut r = RuleRegistry { rules: BTreeMap::new() };
        r.register("answer_generator", answer_rule);
        r.register("echo", echo_rule);
        r.register("identity", identity_rule);
        r
    }
}

impl RuleRegistry {
    pub fn register<F>(&mut self, id: impl Into<String>, f: F)
    where
        F: Fn(&ModuleContext<'_>) -> ModuleOutput + Send + Sync + 'static,
    {
        self.rules.insert(id.into(), Arc::new(f));
    }

    pub fn get(&self, id: &str) -> Option<&RuleFn> {
        self.rules.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.rules.keys().map(String::as_str)
    }
}

fn answer_rule(ctx: &ModuleContext<'_>) -> ModuleOutput {
    let (answer, flags) = generate_answer(ctx.query, ctx.cache);
    flags.into_iter().fold(ModuleOutput::ok(&ctx.spec.name, Payload::Answer(answer)), ModuleOutput::flag)
}

fn identity_rule(ctx: &ModuleContext<'_>) -> ModuleOutput {
    ModuleOutput::ok(&ctx.spec.name, Payload::Text(String::new()))
}

/// Text of one piece of state, as a module would read it.
pub fn read_state(ctx: &ModuleContext<'_>, r: StateRef) -> Option<String> {
    let q = ctx.query;
    match r {
        StateRef::Field(f) => match f {
            QueryField::Question => Some(q.question.clone()),
            QueryField::Context => q.context_text.clone(),
            QueryField::Options => (!q.options.is_empty()).then(|| crate::text::render_options(&q.options)),
            QueryField::ImageRef => q.image_ref.clone(),
            QueryField::Table => q.table.as_ref().map(|t| t.serialize()),
            QueryField::Unit => q.unit.clone(),
            QueryField::Metadata => (!q.metadata.is_empty()).then(|| crate::text::render_metadata(&q.metadata)),
        },
        StateRef::Cache(k) => ctx.cache.latest(k).map(|e| e.value.render()),
    }
}

/// Copies one consumed value (param `from`, else the first consumed ref, else
/// the question) into the first produced key.
fn echo_rule(ctx: &ModuleContext<'_>) -> ModuleOutput {
    let from = match &ctx.spec.backend {
        Backend::RuleBased { params, .. } => params.get("from").and_then(|s| s.parse::<StateRef>().ok()),
        _ => None,
    }
    .or_else(|| ctx.spec.consumes.first().copied())
    .unwrap_or(StateRef::Field(QueryField::Question));
    let text = read_state(ctx, from).unwrap_or_default();
    let out = ModuleOutput::ok(&ctx.spec.name, Payload::Text(text.clone()));
    match ctx.spec.produces.first() {
        Some(&key) => out.write(CacheEntry::new(key, CacheValue::text(text), &ctx.spec.name, ctx.step_index)),
        None => out,
    }
}
