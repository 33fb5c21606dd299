//! Registry of tool modules: planner-facing descriptions, backends, gating and
//! declared state effects. Module definitions are data; the shipped defaults
//! live under `data/inventory/`.

use crate::plan::{ConstraintSet, FallbackProgram};
use crate::types::{CacheKey, QueryField, Table, Task};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use thiserror::Error;

const SCIENCEQA_INVENTORY: &str = include_str!("../../data/inventory/scienceqa.toml");
const TABMWP_INVENTORY: &str = include_str!("../../data/inventory/tabmwp.toml");

#[derive(Debug, Error)]
pub enum InventoryError {
    #[error("module {0:?} is already registered")]
    DuplicateName(String),
    #[error("inventory config: {0}")]
    Config(String),
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("module {module:?}: {problem}")]
    Invalid { module: String, problem: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SandboxAction {
    Verify,
    Execute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backend {
    #[serde(rename = "llm")]
    LlmPrompted {
        template: String,
        #[serde(default = "default_demos")]
        demos: usize,
        #[serde(default = "default_max_tokens")]
        max_tokens: u32,
        #[serde(default)]
        temperature: f64,
        #[serde(default)]
        output: OutputKind,
    },
    #[serde(rename = "http")]
    HttpTool { adapter: String },
    Subprocess { profile: String, action: SandboxAction },
    #[serde(rename = "rule")]
    RuleBased {
        rule: String,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        params: BTreeMap<String, String>,
    },
}

/// How an LLM completion turns into module state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    /// Trimmed completion written to the produced cache key.
    #[default]
    Text,
    /// Completion with code fences removed.
    Program,
    /// Sub-table of the original rows; replaces the query table.
    RowSubtable,
    /// Sub-table of the original columns; replaces the query table.
    ColumnSubtable,
}

fn default_demos() -> usize {
    4
}

fn default_max_tokens() -> u32 {
    512
}

impl Backend {
    pub fn kind(&self) -> &'static str {
        match self {
            Backend::LlmPrompted { .. } => "llm",
            Backend::HttpTool { .. } => "http",
            Backend::Subprocess { .. } => "subprocess",
            Backend::RuleBased { .. } => "rule",
        }
    }
}

/// Predicate under which a module does real work; otherwise it is identity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "predicate", rename_all = "snake_case")]
pub enum Gating {
    TableSize {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rows_above: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        columns_above: Option<usize>,
        #[serde(default)]
        min_cells: usize,
    },
}

impl Gating {
    pub fn admits(&self, table: &Table) -> bool {
        match self {
            Gating::TableSize { rows_above, columns_above, min_cells } => {
                rows_above.is_none_or(|n| table.row_count() > n)
                    && columns_above.is_none_or(|n| table.column_count() > n)
                    && table.cell_count() >= *min_cells
            }
        }
    }
}

/// A piece of state a module reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StateRef {
    Field(QueryField),
    Cache(CacheKey),
}

impl fmt::Display for StateRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateRef::Field(q) => write!(f, "{}", serde_json::to_value(q).unwrap().as_str().unwrap()),
            StateRef::Cache(k) => write!(f, "cache:{k}"),
        }
    }
}

impl std::str::FromStr for StateRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(key) = s.strip_prefix("cache:") {
            CacheKey::parse(key).map(StateRef::Cache).ok_or_else(|| format!("unknown cache key {key:?}"))
        } else {
            QueryField::parse(s).map(StateRef::Field).ok_or_else(|| format!("unknown query field {s:?}"))
        }
    }
}

impl Serialize for StateRef {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StateRef {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub backend: Backend,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gating: Option<Gating>,
    #[serde(default)]
    pub consumes: Vec<StateRef>,
    #[serde(default)]
    pub produces: Vec<CacheKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_effect: Option<QueryField>,
    #[serde(default)]
    pub terminal: bool,
}

impl ModuleSpec {
    pub fn rule(name: impl Into<String>, rule: impl Into<String>) -> Self {
        ModuleSpec {
            name: name.into(),
            description: String::new(),
            backend: Backend::RuleBased { rule: rule.into(), params: BTreeMap::new() },
            gating: None,
            consumes: Vec::new(),
            produces: Vec::new(),
            input_effect: None,
            terminal: false,
        }
    }

    pub fn with_description(mut self, d: impl Into<String>) -> Self {
        self.description = d.into();
        self
    }

    pub fn producing(mut self, keys: impl IntoIterator<Item = CacheKey>) -> Self {
        self.produces = keys.into_iter().collect();
        self
    }

    pub fn consuming(mut self, refs: impl IntoIterator<Item = StateRef>) -> Self {
        self.consumes = refs.into_iter().collect();
        self
    }

    fn check(&self) -> Result<(), InventoryError> {
        let invalid = |problem: String| InventoryError::Invalid { module: self.name.clone(), problem };
        if self.name.trim().is_empty() || self.name.chars().any(|c| c.is_whitespace() || c == ',' || c == '"') {
            return Err(invalid("name must be a non-empty identifier".into()));
        }
        if let Some(field) = self.input_effect {
            if field != QueryField::Table {
                return Err(invalid(format!("input_effect may only replace the table, not {field:?}")));
            }
        }
        for key in &self.produces {
            if self.consumes.contains(&StateRef::Cache(*key)) {
                return Err(invalid(format!("cache key {key} is both consumed and produced")));
            }
        }
        if let Backend::LlmPrompted { max_tokens, temperature, .. } = &self.backend {
            if *max_tokens == 0 {
                return Err(invalid("max_tokens must be at least 1".into()));
            }
            if temperature.is_nan() || *temperature < 0.0 {
                return Err(invalid("temperature must be non-negative".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inventory {
    pub task: Task,
    #[serde(rename = "module")]
    pub specs: Vec<ModuleSpec>,
}

#[derive(Deserialize)]
struct InventoryFile {
    task: Option<String>,
    #[serde(default)]
    module: Vec<ModuleSpec>,
}

fn parse_inventory_file(text: &str) -> Result<InventoryFile, InventoryError> {
    toml::from_str(text).map_err(|e| InventoryError::Config(e.to_string()))
}

impl Inventory {
    pub fn from_toml_str(text: &str) -> Result<Self, InventoryError> {
        let file = parse_inventory_file(text)?;
        let task = file
            .task
            .ok_or_else(|| InventoryError::Config("missing top-level `task`".into()))?
            .parse::<Task>()
            .map_err(InventoryError::Config)?;
        let mut inv = Inventory { task, specs: Vec::new() };
        for spec in file.module {
            inv = inv.register(spec)?;
        }
        inv.check_task_requirements()?;
        Ok(inv)
    }

    pub fn load(path: &Path) -> Result<Self, InventoryError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| InventoryError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }

    /// Appends every `[[module]]` record of a plug-in file; the file's `task`, when given, must match.
    pub fn extend_from_toml_str(self, text: &str) -> Result<Self, InventoryError> {
        let file = parse_inventory_file(text)?;
        if let Some(task) = file.task {
            let task: Task = task.parse().map_err(InventoryError::Config)?;
            if task != self.task {
                return Err(InventoryError::Config(format!(
                    "plug-in file targets {task} but the inventory is for {}",
                    self.task
                )));
            }
        }
        let mut inv = self;
        for spec in file.module {
            inv = inv.register(spec)?;
        }
        inv.check_task_requirements()?;
        Ok(inv)
    }

    pub fn extend_from_file(self, path: &Path) -> Result<Self, InventoryError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| InventoryError::Io { path: path.display().to_string(), source })?;
        self.extend_from_toml_str(&text)
    }

    pub fn get(&self, name: &str) -> Option<&ModuleSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.specs.iter().map(|s| s.name.as_str())
    }

    pub fn name_list(&self) -> Vec<String> {
        self.names().map(str::to_string).collect()
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn terminal(&self) -> Option<&ModuleSpec> {
        self.specs.iter().find(|s| s.terminal)
    }

    pub fn register(mut self, spec: ModuleSpec) -> Result<Self, InventoryError> {
        if self.contains(&spec.name) {
            return Err(InventoryError::DuplicateName(spec.name));
        }
        spec.check()?;
        if spec.terminal && self.terminal().is_some() {
            return Err(InventoryError::Invalid {
                module: spec.name,
                problem: "inventory already has a terminal module".into(),
            });
        }
        self.specs.push(spec);
        Ok(self)
    }

    /// Same inventory minus the named modules (used to hide modules from the planner).
    pub fn without<S: AsRef<str>>(&self, names: &[S]) -> Inventory {
        Inventory {
            task: self.task,
            specs: self
                .specs
                .iter()
                .filter(|s| !names.iter().any(|n| n.as_ref() == s.name))
                .cloned()
                .collect(),
        }
    }

    fn check_task_requirements(&self) -> Result<(), InventoryError> {
        if self.terminal().is_none() {
            return Err(InventoryError::Config("inventory has no terminal module".into()));
        }
        let constraints = ConstraintSet::for_task(self.task);
        let fallback = FallbackProgram::for_task(self.task);
        for name in constraints.referenced_names().into_iter().chain(fallback.modules.iter().map(String::as_str)) {
            if !self.contains(name) {
                return Err(InventoryError::Config(format!(
                    "{name} is required by the {} constraints or fallback program",
                    self.task
                )));
            }
        }
        Ok(())
    }
}

/// The shipped module subset for a task, in planner-prompt order.
pub fn inventory_for_task(task: Task) -> Inventory {
    let text = match task {
        Task::ScienceQA => SCIENCEQA_INVENTORY,
        Task::TabMWP => TABMWP_INVENTORY,
    };
    Inventory::from_toml_str(text).expect("shipped inventory is valid")
}

/// `Name: description` blocks, one per module, separated by blank lines.
pub fn planner_descriptions(inv: &Inventory) -> String {
    inv.specs
        .iter()
        .map(|s| {
            if s.description.trim().is_empty() {
                s.name.clone()
            } else {
                format!("{}: {}", s.name, s.description.trim())
            }
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::parse_table;

    #[test]
    fn scienceqa_inventory() {
        let inv = inventory_for_task(Task::ScienceQA);
        assert_eq!(
            inv.name_list(),
            [
                "Query_Generator",
                "Bing_Search",
                "Image_Captioner",
                "Text_Detector",
                "Knowledge_Retrieval",
                "Solution_Generator",
                "Answer_Generator"
            ]
        );
    }

    #[test]
    fn tabmwp_inventory() {
        let inv = inventory_for_task(Task::TabMWP);
        assert_eq!(inv.len(), 9);
        assert!(inv.contains("Program_Verifier"));
        for n in [
            "Knowledge_Retrieval",
            "Row_Lookup",
            "Column_Lookup",
            "Table_Verbalizer",
            "Program_Generator",
            "Program_Verifier",
            "Program_Executor",
            "Solution_Generator",
            "Answer_Generator",
        ] {
            assert!(inv.contains(n), "{n}");
        }
    }

    #[test]
    fn reusable_tools_shared() {
        let a = inventory_for_task(Task::ScienceQA);
        let b = inventory_for_task(Task::TabMWP);
        for n in ["Knowledge_Retrieval", "Solution_Generator", "Answer_Generator"] {
            assert!(a.contains(n) && b.contains(n));
        }
    }

    #[test]
    fn inventory_is_order_stable() {
        for task in [Task::ScienceQA, Task::TabMWP] {
            assert_eq!(inventory_for_task(task), inventory_for_task(task));
        }
    }

    #[test]
    fn one_terminal_module_per_task() {
        for task in [Task::ScienceQA, Task::TabMWP] {
            let inv = inventory_for_task(task);
            let terminals: Vec<_> = inv.specs.iter().filter(|s| s.terminal).collect();
            assert_eq!(terminals.len(), 1);
            assert_eq!(terminals[0].name, "Answer_Generator");
        }
    }

    #[test]
    fn demo_and_token_overrides() {
        let llm = |task, name: &str| match &inventory_for_task(task).get(name).unwrap().backend {
            Backend::LlmPrompted { demos, max_tokens, temperature, .. } => (*demos, *max_tokens, *temperature),
            other => panic!("{other:?}"),
        };
        assert_eq!(llm(Task::ScienceQA, "Knowledge_Retrieval"), (3, 512, 0.0));
        assert_eq!(llm(Task::ScienceQA, "Query_Generator"), (4, 64, 0.0));
        assert_eq!(llm(Task::ScienceQA, "Solution_Generator"), (2, 512, 0.0));
        assert_eq!(llm(Task::TabMWP, "Knowledge_Retrieval"), (5, 512, 0.0));
        assert_eq!(llm(Task::TabMWP, "Row_Lookup"), (7, 256, 0.0));
        assert_eq!(llm(Task::TabMWP, "Column_Lookup"), (6, 256, 0.0));
        assert_eq!(llm(Task::TabMWP, "Table_Verbalizer"), (7, 512, 0.0));
        assert_eq!(llm(Task::TabMWP, "Program_Generator"), (4, 256, 0.0));
        assert_eq!(llm(Task::TabMWP, "Solution_Generator"), (16, 512, 0.0));
    }

    #[test]
    fn descriptions_follow_prompt_layout() {
        let text = planner_descriptions(&inventory_for_task(Task::ScienceQA));
        assert!(text.starts_with("Query_Generator: This module generates a search engine query"));
        let positions: Vec<usize> = inventory_for_task(Task::ScienceQA)
            .names()
            .map(|n| text.find(&format!("{n}: ")).unwrap())
            .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn empty_description_renders_name_only() {
        let inv = inventory_for_task(Task::ScienceQA).register(ModuleSpec::rule("Unit_Converter", "identity")).unwrap();
        assert!(planner_descriptions(&inv).ends_with("\n\nUnit_Converter"));
    }

    #[test]
    fn register_grows_inventory() {
        let inv = inventory_for_task(Task::TabMWP);
        let n = inv.len();
        let inv = inv.register(ModuleSpec::rule("Unit_Converter", "identity").with_description("Converts units.")).unwrap();
        assert_eq!(inv.len(), n + 1);
        assert!(planner_descriptions(&inv).ends_with("Unit_Converter: Converts units."));
    }

    #[test]
    fn register_rejects_duplicates() {
        let err = inventory_for_task(Task::ScienceQA)
            .register(ModuleSpec::rule("Knowledge_Retrieval", "identity"))
            .unwrap_err();
        assert!(matches!(err, InventoryError::DuplicateName(n) if n == "Knowledge_Retrieval"));
    }

    #[test]
    fn rejects_non_table_input_effects() {
        let mut spec = ModuleSpec::rule("Rewriter", "identity");
        spec.input_effect = Some(QueryField::Question);
        assert!(inventory_for_task(Task::TabMWP).register(spec).is_err());
    }

    #[test]
    fn plugin_file_extends_inventory() {
        let plugin = r#"
task = "scienceqa"
[[module]]
name = "Echo"
description = "Copies the question into the knowledge cache."
backend = { kind = "rule", rule = "echo" }
consumes = ["question"]
produces = ["knowledge"]
"#;
        let inv = inventory_for_task(Task::ScienceQA).extend_from_toml_str(plugin).unwrap();
        assert_eq!(inv.get("Echo").unwrap().produces, vec![CacheKey::Knowledge]);
    }

    #[test]
    fn plugin_for_other_task_is_rejected() {
        let plugin = "task = \"tabmwp\"\n[[module]]\nname = \"X\"\nbackend = { kind = \"rule\", rule = \"identity\" }\n";
        assert!(inventory_for_task(Task::ScienceQA).extend_from_toml_str(plugin).is_err());
    }

    #[test]
    fn row_gate_thresholds() {
        let inv = inventory_for_task(Task::TabMWP);
        let gate = inv.get("Row_Lookup").unwrap().gating.clone().unwrap();
        let small = parse_table("a | b\nc | d").unwrap();
        assert!(!gate.admits(&small));
        let committee = parse_table(
            "Committee | Students | Teachers\nProgram | 5 | 17\nTicket | 20 | 5\nMusic | 20 | 15\nSchedule | 15 | 20\nFood | 18 | 2",
        )
        .unwrap();
        assert!(gate.admits(&committee));
        // 4 rows x 4 columns = 16 cells: enough rows, too few cells.
        let sixteen = parse_table("a|b|c|d\ne|f|g|h\ni|j|k|l\nm|n|o|p").unwrap();
        assert!(!gate.admits(&sixteen));
    }

    #[test]
    fn column_gate_thresholds() {
        let inv = inventory_for_task(Task::TabMWP);
        let gate = inv.get("Column_Lookup").unwrap().gating.clone().unwrap();
        let two_cols: String = (0..12).map(|i| format!("r{i} | {i}\n")).collect();
        assert!(!gate.admits(&parse_table(&two_cols).unwrap()));
        let three_cols: String = (0..6).map(|i| format!("r{i} | {i} | x\n")).collect();
        assert!(gate.admits(&parse_table(&three_cols).unwrap()));
    }
}
