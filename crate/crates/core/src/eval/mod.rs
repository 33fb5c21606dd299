//! Datasets, scoring, benchmark runs and trace analytics.

pub mod analytics;
pub mod bench;
pub mod dataset;
pub mod score;

pub use analytics::{executed_programs, planned_programs, program_stats, tool_usage, transition_graph};
pub use bench::{ablation_run, run_benchmark, AblationReport, AccuracyReport, BenchRun};
pub use dataset::{load_benchmark, parse_benchmark, query_from_record, Benchmark, BenchmarkItem, Gold};
pub use score::score;

use crate::executor::ExecutionTrace;
use analytics::{ProgramStats, TransitionGraph};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolUsageReport {
    pub traces: usize,
    /// Share of plans listing the module.
    pub planned: BTreeMap<String, f64>,
    /// Share of runs where the module did work (not gated, skipped or failed).
    pub executed: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub tool_usage: ToolUsageReport,
    pub transitions: TransitionGraph,
    pub program_stats: ProgramStats,
}

impl AnalysisReport {
    pub fn build(traces: &[ExecutionTrace]) -> Self {
        let planned = planned_programs(traces);
        AnalysisReport {
            tool_usage: ToolUsageReport {
                traces: traces.len(),
                planned: tool_usage(&planned),
                executed: tool_usage(&executed_programs(traces)),
            },
            transitions: transition_graph(&planned),
            program_stats: program_stats(&planned),
        }
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "traces            {}", self.tool_usage.traces);
        let _ = writeln!(s, "unique programs   {}", self.program_stats.unique_programs);
        let _ = writeln!(s, "average length    {}", self.program_stats.average_length);
        let _ = writeln!(s, "\n{:<22} {:>8} {:>9}", "module", "planned", "executed");
        for (m, p) in &self.tool_usage.planned {
            let e = self.tool_usage.executed.get(m).copied().unwrap_or(0.0);
            let _ = writeln!(s, "{m:<22} {:>7.1}% {:>8.1}%", p * 100.0, e * 100.0);
        }
        s
    }

    /// Writes tool_usage.json, transitions.json, transitions.dot, program_stats.json and analysis.txt.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let files = [
            ("tool_usage.json", pretty(&self.tool_usage)),
            ("transitions.json", pretty(&self.transitions)),
            ("transitions.dot", self.transitions.to_dot()),
            ("program_stats.json", pretty(&self.program_stats)),
            ("analysis.txt", self.summary()),
        ];
        let mut written = Vec::new();
        for (name, body) in files {
            let p = dir.join(name);
            std::fs::write(&p, body)?;
            written.push(p);
        }
        Ok(written)
    }
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("reports serialize") + "\n"
}
