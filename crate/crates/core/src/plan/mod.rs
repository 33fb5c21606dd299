//! The program language the planner speaks: a bracketed list of module names,
//! per-task structural constraints, and the fallback programs used when a
//! completion cannot be parsed or breaks a constraint.

use crate::types::{Plan, PlanSource, Task};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

pub const SOLUTION_GENERATOR: &str = "Solution_Generator";
pub const ANSWER_GENERATOR: &str = "Answer_Generator";
pub const PROGRAM_GENERATOR: &str = "Program_Generator";
pub const PROGRAM_VERIFIER: &str = "Program_Verifier";
pub const PROGRAM_EXECUTOR: &str = "Program_Executor";

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum ParseFailure {
    #[error("no bracketed module list found")]
    NoBracketedList,
    #[error("unknown module {0:?}")]
    UnknownModule(String),
    #[error("module list is empty")]
    EmptyList,
}

const QUOTES: &[char] = &['"', '\'', '`', '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}'];

/// Byte range of the first balanced `[ ... ]` region, brackets included.
fn first_bracketed_region(text: &str) -> Option<(usize, usize)> {
    let mut search_from = 0;
    while let Some(rel) = text[search_from..].find('[') {
        let start = search_from + rel;
        let mut depth = 0usize;
        for (i, c) in text[start..].char_indices() {
            match c {
                '[' => depth += 1,
                ']' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some((start, start + i + 1));
                    }
                }
                _ => {}
            }
        }
        // Unbalanced from here on; no later '[' can balance either.
        search_from = start + 1;
        if !text[search_from..].contains(']') {
            break;
        }
    }
    None
}

/// Tolerant extraction of a module list from a raw planner completion.
pub fn parse_plan<S: AsRef<str>>(text: &str, inventory: &[S]) -> Result<Plan, ParseFailure> {
    let (start, end) = first_bracketed_region(text).ok_or(ParseFailure::NoBracketedList)?;
    let inner = &text[start + 1..end - 1];
    let mut modules = Vec::new();
    for token in inner.split(',') {
        let name = token.trim().trim_matches(|c: char| QUOTES.contains(&c) || c.is_whitespace());
        if name.is_empty() {
            continue;
        }
        if !inventory.iter().any(|n| n.as_ref() == name) {
            return Err(ParseFailure::UnknownModule(name.to_string()));
        }
        modules.push(name.to_string());
    }
    if modules.is_empty() {
        return Err(ParseFailure::EmptyList);
    }
    Ok(Plan { modules, source: PlanSource::Planner, raw_planner_text: Some(text.to_string()) })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Rule {
    MustEndWith { suffix: Vec<String> },
    MustContain { module: String },
    /// When `later` appears, `earlier` must appear and its first occurrence must come first.
    MustPrecede { earlier: String, later: String },
}

impl Rule {
    pub fn holds(&self, plan: &Plan) -> bool {
        match self {
            Rule::MustEndWith { suffix } => plan.modules.ends_with(suffix),
            Rule::MustContain { module } => plan.contains(module),
            Rule::MustPrecede { earlier, later } => match plan.first_index(later) {
                None => true,
                Some(l) => plan.first_index(earlier).is_some_and(|e| e < l),
            },
        }
    }

    pub fn names(&self) -> Vec<&str> {
        match self {
            Rule::MustEndWith { suffix } => suffix.iter().map(String::as_str).collect(),
            Rule::MustContain { module } => vec![module.as_str()],
            Rule::MustPrecede { earlier, later } => vec![earlier.as_str(), later.as_str()],
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::MustEndWith { suffix } => write!(f, "MustEndWith({})", suffix.join(", ")),
            Rule::MustContain { module } => write!(f, "MustContain({module})"),
            Rule::MustPrecede { earlier, later } => write!(f, "MustPrecede({earlier}, {later})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub task: Task,
    pub rules: Vec<Rule>,
}

impl ConstraintSet {
    pub fn for_task(task: Task) -> Self {
        let s = |x: &str| x.to_string();
        let rules = match task {
            Task::ScienceQA => vec![Rule::MustEndWith { suffix: vec![s(SOLUTION_GENERATOR), s(ANSWER_GENERATOR)] }],
            Task::TabMWP => vec![
                Rule::MustContain { module: s(ANSWER_GENERATOR) },
                Rule::MustPrecede { earlier: s(PROGRAM_GENERATOR), later: s(PROGRAM_VERIFIER) },
                Rule::MustPrecede { earlier: s(PROGRAM_GENERATOR), later: s(PROGRAM_EXECUTOR) },
            ],
        };
        ConstraintSet { task, rules }
    }

    /// Every module the rules mention.
    pub fn referenced_names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self.rules.iter().flat_map(Rule::names).collect();
        names.sort_unstable();
        names.dedup();
        names
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "violations", rename_all = "snake_case")]
pub enum Validation {
    Valid,
    Invalid(Vec<Rule>),
}

impl Validation {
    pub fn is_valid(&self) -> bool {
        matches!(self, Validation::Valid)
    }
}

pub fn validate_plan(plan: &Plan, constraints: &ConstraintSet) -> Validation {
    if plan.is_empty() {
        // An empty plan breaks every structural expectation; report all rules.
        return Validation::Invalid(constraints.rules.clone());
    }
    let violated: Vec<Rule> = constraints.rules.iter().filter(|r| !r.holds(plan)).cloned().collect();
    if violated.is_empty() {
        Validation::Valid
    } else {
        Validation::Invalid(violated)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FallbackProgram {
    pub task: Task,
    pub modules: Vec<String>,
}

impl FallbackProgram {
    pub fn for_task(task: Task) -> Self {
        let modules: &[&str] = match task {
            Task::ScienceQA => &[SOLUTION_GENERATOR, ANSWER_GENERATOR],
            Task::TabMWP => &[PROGRAM_GENERATOR, PROGRAM_VERIFIER, PROGRAM_EXECUTOR, ANSWER_GENERATOR],
        };
        FallbackProgram { task, modules: modules.iter().map(|s| s.to_string()).collect() }
    }

    pub fn to_plan(&self) -> Plan {
        Plan::new(self.modules.clone(), PlanSource::Fallback)
    }
}

/// Why a planner completion was replaced by the fallback program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum FallbackReason {
    Unparsable(ParseFailure),
    ConstraintViolation(Vec<Rule>),
    PlannerUnavailable(String),
}

impl fmt::Display for FallbackReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FallbackReason::Unparsable(p) => write!(f, "unparsable planner output: {p}"),
            FallbackReason::ConstraintViolation(rules) => {
                let names: Vec<String> = rules.iter().map(ToString::to_string).collect();
                write!(f, "plan violates {}", names.join("; "))
            }
            FallbackReason::PlannerUnavailable(e) => write!(f, "planner unavailable: {e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolved {
    pub plan: Plan,
    pub fallback_reason: Option<FallbackReason>,
}

/// Keeps a parsed plan only if it satisfies the constraints; anything else becomes the fallback.
pub fn resolve_plan(
    parsed: Result<Plan, ParseFailure>,
    constraints: &ConstraintSet,
    fallback: &FallbackProgram,
) -> Resolved {
    debug_assert_eq!(constraints.task, fallback.task);
    let fallback_with_text = |raw: Option<String>| {
        let mut p = fallback.to_plan();
        p.raw_planner_text = raw;
        p
    };
    match parsed {
        Err(failure) => Resolved {
            plan: fallback_with_text(None),
            fallback_reason: Some(FallbackReason::Unparsable(failure)),
        },
        Ok(plan) => match validate_plan(&plan, constraints) {
            Validation::Valid => Resolved { plan, fallback_reason: None },
            Validation::Invalid(rules) => Resolved {
                plan: fallback_with_text(plan.raw_planner_text),
                fallback_reason: Some(FallbackReason::ConstraintViolation(rules)),
            },
        },
    }
}
