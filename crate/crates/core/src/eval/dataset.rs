//! Benchmark files: a JSON array or one JSON object per line.

use crate::modules::answer::{normalize_number, parse_number};
use crate::types::{parse_table, Query, Task};
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

/// Metadata keys that become accuracy splits when present.
pub const SPLIT_KEYS: &[&str] = &["subject", "topic", "category", "grade", "ques_type", "ans_type"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read benchmark {path}: {message}")]
    FileUnreadable { path: String, message: String },
    #[error("benchmark {path} is not a JSON array or JSON lines: {message}")]
    SchemaMismatch { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Gold {
    Choice(usize),
    #[serde(with = "rust_decimal::serde::str")]
    Number(Decimal),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub query: Query,
    pub gold: Gold,
    /// Split label per split family, e.g. `subject -> natural science`.
    pub splits: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejected {
    pub pid: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct Benchmark {
    pub items: Vec<BenchmarkItem>,
    pub rejected: Vec<Rejected>,
}

fn records(text: &str) -> Result<Vec<Value>, String> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        return serde_json::from_str::<Vec<Value>>(trimmed).map_err(|e| e.to_string());
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

/// Python-literal spelling of scalar metadata, matching how planner prompts show it.
fn meta_value(v: &Value) -> String {
    match v {
        Value::Bool(true) => "True".into(),
        Value::Bool(false) => "False".into(),
        Value::Null => "None".into(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn str_field<'a>(r: &'a Value, key: &str) -> Option<&'a str> {
    r.get(key).and_then(Value::as_str).filter(|s| !s.trim().is_empty())
}

fn pid_of(r: &Value, index: usize) -> String {
    match r.get("pid") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => format!("#{index}"),
    }
}

fn gold_of(answer: &Value, options: &[String]) -> Result<Gold, String> {
    if !options.is_empty() {
        let idx = match answer {
            Value::Number(n) => n.as_u64().map(|i| i as usize).ok_or("answer index is not a non-negative integer")?,
            Value::String(s) => options
                .iter()
                .position(|o| o.trim() == s.trim())
                .ok_or_else(|| format!("answer {s:?} is not among the choices"))?,
            _ => return Err("answer must be a choice index or choice text".into()),
        };
        if idx >= options.len() {
            return Err(format!("answer index {idx} out of range for {} choices", options.len()));
        }
        return Ok(Gold::Choice(idx));
    }
    let text = match answer {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        _ => return Err("answer is missing".into()),
    };
    if text.trim().is_empty() {
        return Err("answer is empty".into());
    }
    Ok(match normalize_number(&text) {
        Some((_, v)) if parse_number(&text).is_some() => Gold::Number(v),
        _ => Gold::Text(text.trim().to_string()),
    })
}

/// The query part of one record; `answer` is ignored.
pub fn query_from_record(r: &Value, task: Task) -> Result<Query, String> {
    query_of(r, pid_of(r, 0), task)
}

fn query_of(r: &Value, pid: String, task: Task) -> Result<Query, String> {
    let question = str_field(r, "question").ok_or_else(|| "missing question".to_string())?;
    let mut q = Query::new(pid, task, question);
    if let Some(choices) = r.get("choices").filter(|c| !c.is_null()) {
        let list = choices.as_array().ok_or_else(|| "choices must be a list".to_string())?;
        q.options = list.iter().map(meta_value).collect();
    }
    if let Some(hint) = str_field(r, "hint") {
        q.context_text = Some(hint.to_string());
    }
    if let Some(image) = str_field(r, "image") {
        q.image_ref = Some(image.to_string());
    }
    if let Some(unit) = str_field(r, "unit") {
        q.unit = Some(unit.to_string());
    }
    match r.get("table") {
        None | Some(Value::Null) => {}
        Some(Value::String(table)) => {
            let t = parse_table(table).map_err(|e| format!("malformed table: {e}"))?;
            q.table = Some(t.with_title(str_field(r, "table_title").map(str::to_string)));
        }
        Some(_) => return Err("malformed table: expected pipe-separated text".to_string()),
    }
    if let Some(meta) = r.get("metadata").filter(|m| !m.is_null()) {
        let obj = meta.as_object().ok_or_else(|| "metadata must be an object".to_string())?;
        for (k, v) in obj {
            q.metadata.insert(k.clone(), meta_value(v));
        }
    }
    if task == Task::ScienceQA && !q.metadata.contains_key("has_image") {
        let flag = if q.image_ref.is_some() { "True" } else { "False" };
        q.metadata.insert("has_image".into(), flag.into());
    }
    q.validate().map_err(|e| e.to_string())?;
    Ok(q)
}

fn item_of(r: &Value, index: usize, task: Task) -> Result<BenchmarkItem, Rejected> {
    let pid = pid_of(r, index);
    let reject = |reason: String| Rejected { pid: pid.clone(), reason };
    let q = query_of(r, pid.clone(), task).map_err(reject)?;
    let gold = gold_of(r.get("answer").unwrap_or(&Value::Null), &q.options).map_err(reject)?;

    let mut splits = BTreeMap::new();
    for key in SPLIT_KEYS {
        if let Some(v) = q.metadata.get(*key) {
            splits.insert((*key).to_string(), v.clone());
        }
    }
    if task == Task::ScienceQA {
        let kind = match (&q.image_ref, &q.context_text) {
            (Some(_), _) => "IMG",
            (None, Some(_)) => "TXT",
            (None, None) => "NO",
        };
        splits.insert("context".into(), kind.into());
    }
    Ok(BenchmarkItem { query: q, gold, splits })
}

pub fn parse_benchmark(text: &str, task: Task, origin: &str) -> Result<Benchmark, DatasetError> {
    let recs = records(text).map_err(|message| DatasetError::SchemaMismatch { path: origin.into(), message })?;
    let mut bench = Benchmark::default();
    for (i, r) in recs.iter().enumerate() {
        if !r.is_object() {
            bench.rejected.push(Rejected { pid: format!("#{i}"), reason: "record is not an object".into() });
            continue;
        }
        match item_of(r, i, task) {
            Ok(item) => bench.items.push(item),
            Err(rej) => {
                tracing::warn!(pid = %rej.pid, "rejected benchmark item: {}", rej.reason);
                bench.rejected.push(rej);
            }
        }
    }
    Ok(bench)
}

pub fn load_benchmark(path: &Path, task: Task) -> Result<Benchmark, DatasetError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path)
        .map_err(|e| DatasetError::FileUnreadable { path: shown.clone(), message: e.to_string() })?;
    parse_benchmark(&text, task, &shown)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO: &str = r#"{"pid": "t1", "question": "How much more does a designer watch cost than a designer coat?", "table": "designer watch | $8,141\ndesigner coat | $6,391", "unit": "$", "answer": "1,750", "metadata": {"grade": 4, "ques_type": "free_text"}}
{"pid": "t2", "question": "Is there a surplus or a shortage?", "table_title": "Basketballs", "table": "Price | Quantity demanded | Quantity supplied\n$155 | 22,600 | 5,800", "choices": ["shortage", "surplus"], "answer": "shortage"}"#;

    #[test]
    fn loads_two_tabmwp_items() {
        let b = parse_benchmark(TWO, Task::TabMWP, "two").unwrap();
        assert!(b.rejected.is_empty(), "{:?}", b.rejected);
        assert_eq!(b.items.len(), 2);
        assert_eq!(b.items[0].gold, Gold::Number(Decimal::new(175000, 2)));
        assert_eq!(b.items[0].splits["grade"], "4");
        assert_eq!(b.items[1].gold, Gold::Choice(0));
        assert_eq!(b.items[1].query.table.as_ref().unwrap().title.as_deref(), Some("Basketballs"));
    }

    #[test]
    fn missing_question_names_the_pid() {
        let b = parse_benchmark(r#"[{"pid": 42, "answer": 1}, {"pid": 43, "question": "q", "choices": ["a", "b"], "answer": 1}]"#, Task::ScienceQA, "x")
            .unwrap();
        assert_eq!(b.rejected, [Rejected { pid: "42".into(), reason: "missing question".into() }]);
        assert_eq!(b.items[0].gold, Gold::Choice(1));
        assert_eq!(b.items[0].query.metadata["has_image"], "False");
        assert_eq!(b.items[0].splits["context"], "NO");
    }

    #[test]
    fn malformed_table_rejects_only_that_item() {
        let b = parse_benchmark(
            "{\"pid\": 1, \"question\": \"q\", \"table\": \"\\n  \\n\", \"answer\": \"1\"}\n{\"pid\": 2, \"question\": \"q\", \"answer\": \"x\"}",
            Task::TabMWP,
            "x",
        )
        .unwrap();
        assert_eq!(b.rejected.len(), 1);
        assert!(b.rejected[0].reason.starts_with("malformed table"));
        assert_eq!(b.items[0].gold, Gold::Text("x".into()));
    }

    #[test]
    fn out_of_range_choice_is_rejected() {
        let b = parse_benchmark(r#"[{"pid": 1, "question": "q", "choices": ["a"], "answer": 3}]"#, Task::ScienceQA, "x").unwrap();
        assert!(b.items.is_empty());
    }

    #[test]
    fn garbage_is_schema_mismatch() {
        assert!(matches!(parse_benchmark("not json", Task::TabMWP, "x"), Err(DatasetError::SchemaMismatch { .. })));
    }
}
