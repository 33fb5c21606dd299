//! Shared domain model: queries, tables, caches, plans and module outputs.

mod cache;
mod table;

pub use cache::{Cache, CacheEntry, CacheKey, CacheValue, TextBox};
pub use table::{parse_table, serialize_table, Table, TableError, CELL_SEPARATOR};

use indexmap::IndexMap;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    ScienceQA,
    TabMWP,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::ScienceQA => "scienceqa",
            Task::TabMWP => "tabmwp",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "scienceqa" | "sqa" => Ok(Task::ScienceQA),
            "tabmwp" => Ok(Task::TabMWP),
            other => Err(format!("unknown task {other:?} (expected scienceqa or tabmwp)")),
        }
    }
}

/// Query fields a module may declare as its input effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryField {
    Question,
    Context,
    Options,
    ImageRef,
    Table,
    Unit,
    Metadata,
}

impl QueryField {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "question" => QueryField::Question,
            "context" => QueryField::Context,
            "options" => QueryField::Options,
            "image_ref" | "image" => QueryField::ImageRef,
            "table" => QueryField::Table,
            "unit" => QueryField::Unit,
            "metadata" => QueryField::Metadata,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("query {0}: option {1} is empty")]
    EmptyOption(String, usize),
    #[error("query {0}: options {1} and {2} are duplicates")]
    DuplicateOption(String, usize, usize),
    #[error("query {0}: TabMWP queries cannot carry an image")]
    ImageOnTableTask(String),
    #[error("query {0}: has_image metadata disagrees with image presence")]
    HasImageMismatch(String),
    #[error("query {0}: question is empty")]
    EmptyQuestion(String),
}

/// The evolving problem state handed from module to module.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub task: Task,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_text: Option<String>,
    #[serde(default)]
    pub options: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Table>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(default)]
    pub metadata: IndexMap<String, String>,
}

impl Query {
    pub fn new(id: impl Into<String>, task: Task, question: impl Into<String>) -> Self {
        Query {
            id: id.into(),
            task,
            question: question.into(),
            context_text: None,
            options: Vec::new(),
            image_ref: None,
            table: None,
            unit: None,
            metadata: IndexMap::new(),
        }
    }

    pub fn with_options<I, S>(mut self, options: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.options = options.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_context(mut self, context: impl Into<String>) -> Self {
        let c = context.into();
        self.context_text = if c.trim().is_empty() { None } else { Some(c) };
        self
    }

    pub fn with_table(mut self, table: Table) -> Self {
        self.table = Some(table);
        self
    }

    pub fn with_image(mut self, image: impl Into<String>) -> Self {
        self.image_ref = Some(image.into());
        self
    }

    pub fn with_unit(mut self, unit: impl Into<String>) -> Self {
        self.unit = Some(unit.into());
        self
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    pub fn validate(&self) -> Result<(), QueryError> {
        if self.question.trim().is_empty() {
            return Err(QueryError::EmptyQuestion(self.id.clone()));
        }
        let mut seen: Vec<String> = Vec::with_capacity(self.options.len());
        for (i, opt) in self.options.iter().enumerate() {
            let norm = crate::text::collapse_whitespace(opt);
            if norm.is_empty() {
                return Err(QueryError::EmptyOption(self.id.clone(), i));
            }
            if let Some(j) = seen.iter().position(|s| *s == norm) {
                return Err(QueryError::DuplicateOption(self.id.clone(), j, i));
            }
            seen.push(norm);
        }
        if self.task == Task::TabMWP && self.image_ref.is_some() {
            return Err(QueryError::ImageOnTableTask(self.id.clone()));
        }
        if let Some(flag) = self.metadata.get("has_image") {
            let claimed = matches!(flag.to_ascii_lowercase().as_str(), "true" | "1" | "yes");
            if claimed != self.image_ref.is_some() {
                return Err(QueryError::HasImageMismatch(self.id.clone()));
            }
        }
        Ok(())
    }

    /// Content digest over the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("query serializes");
        crate::text::sha256_hex(&json)
    }
}

/// Replacement of a query field by a module (only the table is replaceable).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "field", rename_all = "snake_case")]
pub enum InputUpdate {
    Table { table: Table },
}

impl InputUpdate {
    pub fn field(&self) -> QueryField {
        match self {
            InputUpdate::Table { .. } => QueryField::Table,
        }
    }

    pub fn apply(&self, q: &mut Query) {
        match self {
            InputUpdate::Table { table } => {
                let title = q.table.as_ref().and_then(|t| t.title.clone());
                let mut t = table.clone();
                if t.title.is_none() {
                    t.title = title;
                }
                q.table = Some(t);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanSource {
    Planner,
    Fallback,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub modules: Vec<String>,
    pub source: PlanSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_planner_text: Option<String>,
}

impl Plan {
    pub fn new<I, S>(modules: I, source: PlanSource) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Plan { modules: modules.into_iter().map(Into::into).collect(), source, raw_planner_text: None }
    }

    pub fn scripted<I, S>(modules: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(modules, PlanSource::Scripted)
    }

    pub fn len(&self) -> usize {
        self.modules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modules.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.modules.iter().any(|m| m == name)
    }

    pub fn first_index(&self, name: &str) -> Option<usize> {
        self.modules.iter().position(|m| m == name)
    }

    /// Renders the plan the way planner demonstrations write it.
    pub fn render(&self) -> String {
        let quoted: Vec<String> = self.modules.iter().map(|m| format!("\"{m}\"")).collect();
        format!("[{}]", quoted.join(", "))
    }

    pub fn distinct_modules(&self) -> HashSet<&str> {
        self.modules.iter().map(String::as_str).collect()
    }
}

/// Markers attached to steps and plans so degraded paths stay visible in traces.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    /// The module's gating predicate declined; it acted as identity.
    Gated,
    LookupParseFailure,
    ReplayMiss,
    DisabledSkipped,
    VerifierRejected,
    EmptySearchResult,
    SearchQueryFromQuestion,
    PlannerUnavailable,
    ShadowedCacheEntry(CacheKey),
    AnswerCoerced,
    PreferredSolutionOverRejectedProgram,
    StepBudgetExceeded,
    ExecutorWithoutGenerator,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum FailureReason {
    Gateway(String),
    MissingRequiredField(String),
    MissingTable,
    MissingProgram,
    MissingImage,
    ImageUnreadable(String),
    AdapterUnavailable(String),
    AdapterProtocol(String),
    QuotaExceeded,
    SandboxUnavailable(String),
    VerifierRejected,
    Timeout,
    RuntimeFault(String),
    NoResultVariable,
    ContractViolation(String),
    UnknownBackend(String),
    StepBudgetExceeded,
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FailureReason::Gateway(e) => write!(f, "gateway: {e}"),
            FailureReason::MissingRequiredField(s) => write!(f, "missing required field {s}"),
            FailureReason::MissingTable => f.write_str("query has no table"),
            FailureReason::MissingProgram => f.write_str("no generated program in cache"),
            FailureReason::MissingImage => f.write_str("query has no image"),
            FailureReason::ImageUnreadable(e) => write!(f, "image unreadable: {e}"),
            FailureReason::AdapterUnavailable(e) => write!(f, "adapter unavailable: {e}"),
            FailureReason::AdapterProtocol(e) => write!(f, "adapter protocol error: {e}"),
            FailureReason::QuotaExceeded => f.write_str("search quota exceeded"),
            FailureReason::SandboxUnavailable(e) => write!(f, "sandbox unavailable: {e}"),
            FailureReason::VerifierRejected => f.write_str("program rejected by verifier"),
            FailureReason::Timeout => f.write_str("program timed out"),
            FailureReason::RuntimeFault(e) => write!(f, "runtime fault: {e}"),
            FailureReason::NoResultVariable => f.write_str("program did not set the result variable"),
            FailureReason::ContractViolation(e) => write!(f, "contract violation: {e}"),
            FailureReason::UnknownBackend(e) => write!(f, "unknown backend: {e}"),
            FailureReason::StepBudgetExceeded => f.write_str("step exceeded its wall-clock budget"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum Status {
    Ok,
    Failed(FailureReason),
}

impl Status {
    pub fn is_ok(&self) -> bool {
        matches!(self, Status::Ok)
    }
}

pub const NO_ANSWER: &str = "[NO_ANSWER]";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub raw: String,
    pub normalized: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub option_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "rust_decimal::serde::str_option")]
    pub numeric_value: Option<Decimal>,
}

impl Answer {
    pub fn sentinel() -> Self {
        Answer { raw: NO_ANSWER.into(), normalized: NO_ANSWER.into(), option_index: None, numeric_value: None }
    }

    pub fn is_sentinel(&self) -> bool {
        self.normalized == NO_ANSWER
    }

    pub fn text(raw: impl Into<String>, normalized: impl Into<String>) -> Self {
        Answer { raw: raw.into(), normalized: normalized.into(), option_index: None, numeric_value: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Payload {
    Text(String),
    Answer(Answer),
}

impl Payload {
    pub fn render(&self) -> String {
        match self {
            Payload::Text(t) => t.clone(),
            Payload::Answer(a) => a.normalized.clone(),
        }
    }
}

/// What one module execution yields: a payload plus the state transitions to apply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleOutput {
    pub module: String,
    pub payload: Payload,
    pub cache_writes: Vec<CacheEntry>,
    pub input_updates: Vec<InputUpdate>,
    pub status: Status,
    #[serde(default)]
    pub flags: Vec<Flag>,
    #[serde(default)]
    pub request_digests: Vec<String>,
}

impl ModuleOutput {
    pub fn ok(module: impl Into<String>, payload: Payload) -> Self {
        ModuleOutput {
            module: module.into(),
            payload,
            cache_writes: Vec::new(),
            input_updates: Vec::new(),
            status: Status::Ok,
            flags: Vec::new(),
            request_digests: Vec::new(),
        }
    }

    pub fn failed(module: impl Into<String>, reason: FailureReason) -> Self {
        ModuleOutput {
            module: module.into(),
            payload: Payload::Text(String::new()),
            cache_writes: Vec::new(),
            input_updates: Vec::new(),
            status: Status::Failed(reason),
            flags: Vec::new(),
            request_digests: Vec::new(),
        }
    }

    pub fn write(mut self, entry: CacheEntry) -> Self {
        self.cache_writes.push(entry);
        self
    }

    pub fn update(mut self, update: InputUpdate) -> Self {
        self.input_updates.push(update);
        self
    }

    pub fn flag(mut self, flag: Flag) -> Self {
        if !self.flags.contains(&flag) {
            self.flags.push(flag);
        }
        self
    }

    pub fn digests(mut self, digests: impl IntoIterator<Item = String>) -> Self {
        self.request_digests.extend(digests);
        self
    }

    /// Keeps flags and digests but drops state transitions, so failure never leaks state.
    pub fn into_failed(self, reason: FailureReason) -> Self {
        ModuleOutput {
            payload: Payload::Text(String::new()),
            cache_writes: Vec::new(),
            input_updates: Vec::new(),
            status: Status::Failed(reason),
            ..self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_rejects_duplicate_options_after_whitespace_normalization() {
        let q = Query::new("1", Task::ScienceQA, "q?").with_options(["sample  A", "sample A "]);
        assert_eq!(q.validate(), Err(QueryError::DuplicateOption("1".into(), 0, 1)));
    }

    #[test]
    fn validate_rejects_image_on_tabmwp() {
        let q = Query::new("1", Task::TabMWP, "q?").with_image("x.png");
        assert!(matches!(q.validate(), Err(QueryError::ImageOnTableTask(_))));
    }

    #[test]
    fn validate_checks_has_image_flag() {
        let q = Query::new("1", Task::ScienceQA, "q?").with_meta("has_image", "True");
        assert!(matches!(q.validate(), Err(QueryError::HasImageMismatch(_))));
        let q = q.with_image("a.png");
        assert_eq!(q.validate(), Ok(()));
    }

    #[test]
    fn failed_output_has_no_state_changes() {
        let out = ModuleOutput::ok("m", Payload::Text("x".into()))
            .write(CacheEntry::new(CacheKey::Knowledge, CacheValue::text("k"), "m", 0))
            .flag(Flag::ReplayMiss)
            .into_failed(FailureReason::Timeout);
        assert!(out.cache_writes.is_empty());
        assert!(out.input_updates.is_empty());
        assert_eq!(out.flags, vec![Flag::ReplayMiss]);
    }

    #[test]
    fn plan_renders_like_demonstrations() {
        let p = Plan::scripted(["Solution_Generator", "Answer_Generator"]);
        assert_eq!(p.render(), "[\"Solution_Generator\", \"Answer_Generator\"]");
    }

    #[test]
    fn table_update_keeps_title() {
        let mut q = Query::new("1", Task::TabMWP, "q")
            .with_table(parse_table("a | b\nc | d").unwrap().with_title(Some("T".into())));
        InputUpdate::Table { table: parse_table("a | b").unwrap() }.apply(&mut q);
        let t = q.table.unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.title.as_deref(), Some("T"));
    }
}
