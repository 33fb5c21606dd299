//! Benchmark runs, accuracy reports and disabled-module ablations.

use super::dataset::BenchmarkItem;
use super::score::score;
use crate::executor::{Engine, ExecutionTrace};
use crate::planner::PlanOutcome;
use crate::types::{Answer, Plan, PlanSource};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub pid: String,
    pub answer: Answer,
    pub correct: bool,
    /// `None` when the harness itself crashed on this item.
    pub trace: Option<ExecutionTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub results: Vec<ItemResult>,
}

impl BenchRun {
    pub fn traces(&self) -> Vec<ExecutionTrace> {
        self.results.iter().filter_map(|r| r.trace.clone()).collect()
    }

    pub fn crashes(&self) -> usize {
        self.results.iter().filter(|r| r.crash.is_some()).count()
    }

    pub fn accuracy(&self) -> f64 {
        percent(self.results.iter().filter(|r| r.correct).count(), self.results.len())
    }
}

fn percent(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        // Two places, computed in integers so reports are byte-stable.
        (correct as f64 * 10000.0 / total as f64).round() / 100.0
    }
}

fn run_item(engine: &Engine, item: &BenchmarkItem, plan: Option<&Plan>) -> ItemResult {
    let run = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| match plan {
        Some(p) => engine.execute(&item.query, &PlanOutcome::scripted(p.clone())),
        None => engine.solve(&item.query),
    }));
    match run {
        Ok((answer, trace)) => {
            let correct = score(&answer, item);
            ItemResult { pid: item.query.id.clone(), answer, correct, trace: Some(trace), crash: None }
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "harness panic".into());
            tracing::error!(pid = %item.query.id, "harness crashed: {msg}");
            ItemResult { pid: item.query.id.clone(), answer: Answer::sentinel(), correct: false, trace: None, crash: Some(msg) }
        }
    }
}

/// Runs every item, `jobs` at a time (`None`: one worker per core). Result order follows `items`.
pub fn run_benchmark(engine: &Engine, items: &[BenchmarkItem], jobs: Option<usize>, plan: Option<&Plan>) -> BenchRun {
    let work = || items.par_iter().map(|item| run_item(engine, item, plan)).collect::<Vec<_>>();
    let results = match jobs {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(work),
            Err(e) => {
                tracing::warn!("thread pool unavailable ({e}); running sequentially");
                items.iter().map(|item| run_item(engine, item, plan)).collect()
            }
        },
        None => work(),
    };
    BenchRun { results }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAccuracy {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub task: String,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub crashes: usize,
    pub fallback_plans: usize,
    pub sentinel_answers: usize,
    pub splits: BTreeMap<String, BTreeMap<String, SplitAccuracy>>,
}

impl AccuracyReport {
    pub fn build(items: &[BenchmarkItem], run: &BenchRun) -> Self {
        let mut tallies: BTreeMap<String, BTreeMap<String, (usize, usize)>> = BTreeMap::new();
        for (item, r) in items.iter().zip(&run.results) {
            for (family, label) in &item.splits {
                let t = tallies.entry(family.clone()).or_default().entry(label.clone()).or_default();
                t.0 += 1;
                t.1 += usize::from(r.correct);
            }
        }
        let splits = tallies
            .into_iter()
            .map(|(family, labels)| {
                let labels = labels
                    .into_iter()
                    .map(|(l, (total, correct))| (l, SplitAccuracy { total, correct, accuracy: percent(correct, total) }))
                    .collect();
                (family, labels)
            })
            .collect();
        let correct = run.results.iter().filter(|r| r.correct).count();
        AccuracyReport {
            task: items.first().map(|i| i.query.task.to_string()).unwrap_or_default(),
            total: run.results.len(),
            correct,
            accuracy: percent(correct, run.results.len()),
            crashes: run.crashes(),
            fallback_plans: run
                .results
                .iter()
                .filter(|r| r.trace.as_ref().is_some_and(|t| t.plan.source == PlanSource::Fallback))
                .count(),
            sentinel_answers: run.results.iter().filter(|r| r.answer.is_sentinel()).count(),
            splits,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize") + "\n"
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "task      {}", self.task);
        let _ = writeln!(s, "accuracy  {:.2}% ({}/{})", self.accuracy, self.correct, self.total);
        let _ = writeln!(s, "fallback  {}", self.fallback_plans);
        let _ = writeln!(s, "no answer {}", self.sentinel_answers);
        let _ = writeln!(s, "crashes   {}", self.crashes);
        for (family, labels) in &self.splits {
            let _ = writeln!(s, "\n{family}");
            for (label, a) in labels {
                let _ = writeln!(s, "  {label:<28} {:>6.2}% ({}/{})", a.accuracy, a.correct, a.total);
            }
        }
        s
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AblationError {
    #[error("{0} cannot be disabled")]
    CannotDisableTerminal(String),
    #[error("{0} is not in the inventory")]
    UnknownModule(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub disabled: Vec<String>,
    pub baseline_accuracy: f64,
    pub ablated_accuracy: f64,
    pub delta: f64,
    pub skipped_steps: usize,
}

impl AblationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize") + "\n"
    }

    pub fn summary(&self) -> String {
        format!(
            "disabled  {}\nbaseline  {:.2}%\nablated   {:.2}%\ndelta     {:+.2}\nskipped   {} steps\n",
            self.disabled.join(", "),
            self.baseline_accuracy,
            self.ablated_accuracy,
            self.delta,
            self.skipped_steps
        )
    }
}

/// Runs the benchmark with and without `disabled`; the engine's options are restored afterwards.
pub fn ablation_run(
    engine: &mut Engine,
    items: &[BenchmarkItem],
    jobs: Option<usize>,
    disabled: &BTreeSet<String>,
) -> Result<(AblationReport, BenchRun, BenchRun), AblationError> {
    for name in disabled {
        let spec = engine.inventory.get(name).ok_or_else(|| AblationError::UnknownModule(name.clone()))?;
        if spec.terminal || name == crate::plan::SOLUTION_GENERATOR {
            return Err(AblationError::CannotDisableTerminal(name.clone()));
        }
    }
    let saved = engine.options.disabled.clone();
    engine.options.disabled.clear();
    let baseline = run_benchmark(engine, items, jobs, None);
    engine.options.disabled = disabled.clone();
    let ablated = run_benchmark(engine, items, jobs, None);
    engine.options.disabled = saved;

    let skipped_steps = ablated
        .results
        .iter()
        .filter_map(|r| r.trace.as_ref())
        .flat_map(|t| &t.steps)
        .filter(|s| s.flags.contains(&crate::types::Flag::DisabledSkipped))
        .count();
    let (b, a) = (baseline.accuracy(), ablated.accuracy());
    let report = AblationReport {
        disabled: disabled.iter().cloned().collect(),
        baseline_accuracy: b,
        ablated_accuracy: a,
        delta: ((a - b) * 100.0).round() / 100.0,
        skipped_steps,
    };
    Ok((report, baseline, ablated))
}
