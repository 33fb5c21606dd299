//! Aggregates over executed programs: tool usage, transitions, program statistics.

use crate::executor::ExecutionTrace;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

pub const START: &str = "START";
pub const END: &str = "END";

/// Each trace's plan as run.
pub fn planned_programs(traces: &[ExecutionTrace]) -> Vec<Vec<String>> {
    traces.iter().map(|t| t.steps.iter().map(|s| s.module.clone()).collect()).collect()
}

/// Each trace's steps that did work: ok and not gated or ablated.
pub fn executed_programs(traces: &[ExecutionTrace]) -> Vec<Vec<String>> {
    traces
        .iter()
        .map(|t| t.steps.iter().filter(|s| s.status.is_ok() && s.executed()).map(|s| s.module.clone()).collect())
        .collect()
}

/// Fraction of programs containing each module at least once.
pub fn tool_usage<P, S>(programs: &[P]) -> BTreeMap<String, f64>
where
    P: AsRef<[S]>,
    S: AsRef<str>,
{
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for p in programs {
        let distinct: BTreeSet<&str> = p.as_ref().iter().map(AsRef::as_ref).collect();
        for m in distinct {
            *counts.entry(m.to_string()).or_default() += 1;
        }
    }
    let n = programs.len() as f64;
    counts.into_iter().map(|(m, c)| (m, c as f64 / n)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub count: u64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TransitionGraph {
    pub nodes: Vec<String>,
    pub edges: Vec<Edge>,
}

impl TransitionGraph {
    pub fn count(&self, from: &str, to: &str) -> u64 {
        self.edges.iter().find(|e| e.from == from && e.to == to).map_or(0, |e| e.count)
    }

    pub fn probability(&self, from: &str, to: &str) -> f64 {
        self.edges.iter().find(|e| e.from == from && e.to == to).map_or(0.0, |e| e.probability)
    }

    pub fn outgoing_probability(&self, from: &str) -> f64 {
        self.edges.iter().filter(|e| e.from == from).map(|e| e.probability).sum()
    }

    pub fn outgoing_count(&self, from: &str) -> u64 {
        self.edges.iter().filter(|e| e.from == from).map(|e| e.count).sum()
    }

    pub fn incoming_count(&self, to: &str) -> u64 {
        self.edges.iter().filter(|e| e.to == to).map(|e| e.count).sum()
    }

    /// Graphviz rendering; edge labels are probabilities to two places.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph transitions {\n  rankdir=LR;\n");
        for n in &self.nodes {
            let _ = writeln!(s, "  \"{n}\";");
        }
        for e in &self.edges {
            let _ = writeln!(s, "  \"{}\" -> \"{}\" [label=\"{:.2}\", count={}];", e.from, e.to, e.probability, e.count);
        }
        s.push_str("}\n");
        s
    }
}

/// START -> first module, consecutive pairs, last module -> END; normalized per source.
pub fn transition_graph<P, S>(programs: &[P]) -> TransitionGraph
where
    P: AsRef<[S]>,
    S: AsRef<str>,
{
    let mut counts: BTreeMap<(String, String), u64> = BTreeMap::new();
    let mut nodes: BTreeSet<String> = BTreeSet::new();
    for p in programs {
        let seq: Vec<&str> = std::iter::once(START)
            .chain(p.as_ref().iter().map(AsRef::as_ref))
            .chain(std::iter::once(END))
            .collect();
        for w in seq.windows(2) {
            *counts.entry((w[0].to_string(), w[1].to_string())).or_default() += 1;
        }
        nodes.extend(seq.iter().map(|s| s.to_string()));
    }
    let mut totals: BTreeMap<&str, u64> = BTreeMap::new();
    for ((from, _), c) in &counts {
        *totals.entry(from.as_str()).or_default() += c;
    }
    let edges = counts
        .iter()
        .map(|((from, to), &count)| Edge {
            from: from.clone(),
            to: to.clone(),
            count,
            probability: count as f64 / totals[from.as_str()] as f64,
        })
        .collect();
    // START first, END last, modules alphabetically between.
    let mut ordered = vec![START.to_string()];
    ordered.extend(nodes.into_iter().filter(|n| n != START && n != END));
    ordered.push(END.to_string());
    if programs.is_empty() {
        ordered.clear();
    }
    TransitionGraph { nodes: ordered, edges }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramStats {
    pub traces: usize,
    pub unique_programs: usize,
    /// Mean length over all traces, two places.
    #[serde(with = "rust_decimal::serde::str")]
    pub average_length: Decimal,
}

pub fn program_stats<P, S>(programs: &[P]) -> ProgramStats
where
    P: AsRef<[S]>,
    S: AsRef<str>,
{
    let unique: BTreeSet<Vec<&str>> = programs.iter().map(|p| p.as_ref().iter().map(AsRef::as_ref).collect()).collect();
    let total: usize = programs.iter().map(|p| p.as_ref().len()).sum();
    let average_length = if programs.is_empty() {
        Decimal::ZERO
    } else {
        crate::modules::answer::round2(Decimal::from(total) / Decimal::from(programs.len()))
    };
    ProgramStats { traces: programs.len(), unique_programs: unique.len(), average_length }
}
