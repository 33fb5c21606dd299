//! Execution traces and their newline-delimited persistence.

use crate::plan::FallbackReason;
use crate::types::{Answer, CacheEntry, CacheKey, Flag, ModuleOutput, Plan, Query, QueryField, Status, Task};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("cannot read trace file {path}: {source}")]
    Unreadable { path: String, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Malformed { path: String, line: usize, message: String },
    #[error("unsupported trace_version {found} in {path}:{line}")]
    Version { path: String, line: usize, found: u64 },
    #[error("cannot write trace file: {0}")]
    Write(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub module: String,
    pub status: Status,
    pub duration_ms: u64,
    pub cache_writes: Vec<CacheKey>,
    pub input_updates: Vec<QueryField>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<Flag>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub request_digests: Vec<String>,
    pub payload: String,
    /// Digest of the query after this step.
    pub query_digest: String,
    /// New table text when this step replaced it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_after: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_snapshot: Option<Query>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_snapshot: Option<Vec<CacheEntry>>,
}

impl StepRecord {
    /// A step counts as effectively executed unless it was gated or skipped.
    pub fn executed(&self) -> bool {
        !self.flags.iter().any(|f| matches!(f, Flag::Gated | Flag::DisabledSkipped))
    }

    pub(crate) fn from_output(index: usize, out: &ModuleOutput, duration_ms: u64, q_after: &Query) -> Self {
        StepRecord {
            index,
            module: out.module.clone(),
            status: out.status.clone(),
            duration_ms,
            cache_writes: out.cache_writes.iter().map(|e| e.key).collect(),
            input_updates: out.input_updates.iter().map(|u| u.field()).collect(),
            flags: out.flags.clone(),
            request_digests: out.request_digests.clone(),
            payload: out.payload.render(),
            query_digest: q_after.digest(),
            table_after: None,
            query_snapshot: None,
            cache_snapshot: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub trace_version: u32,
    pub query_id: String,
    pub task: Task,
    pub plan: Plan,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_reason: Option<FallbackReason>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub plan_flags: Vec<Flag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planner_digest: Option<String>,
    pub initial_query_digest: String,
    pub steps: Vec<StepRecord>,
    pub final_answer: Answer,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub answer_flags: Vec<Flag>,
    pub started_at: String,
    pub finished_at: String,
}

impl ExecutionTrace {
    /// The executed module sequence (the plan as run).
    pub fn modules(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.module.as_str()).collect()
    }

    /// The same trace with wall-clock fields zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> ExecutionTrace {
        let mut t = self.clone();
        t.started_at.clear();
        t.finished_at.clear();
        for s in &mut t.steps {
            s.duration_ms = 0;
        }
        t
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("traces serialize")
    }
}

pub fn write_traces(path: &Path, traces: &[ExecutionTrace]) -> Result<(), TraceError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for t in traces {
        writeln!(w, "{}", t.to_json_line())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_traces(path: &Path) -> Result<Vec<ExecutionTrace>, TraceError> {
    let shown = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| TraceError::Unreadable { path: shown.clone(), source })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| TraceError::Unreadable { path: shown.clone(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| TraceError::Malformed { path: shown.clone(), line: i + 1, message: e.to_string() })?;
        let version = value.get("trace_version").and_then(|v| v.as_u64()).unwrap_or(0);
        if version != u64::from(TRACE_VERSION) {
            return Err(TraceError::Version { path: shown, line: i + 1, found: version });
        }
        let trace = serde_json::from_value(value)
            .map_err(|e| TraceError::Malformed { path: shown.clone(), line: i + 1, message: e.to_string() })?;
        out.push(trace);
    }
    Ok(out)
}
