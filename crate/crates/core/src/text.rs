//! Small text helpers shared by prompt rendering, answer extraction and digests.

use crate::types::TextBox;
use indexmap::IndexMap;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercase, punctuation stripped, whitespace collapsed.
pub fn normalize_for_match(s: &str) -> String {
    let cleaned: String = s
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect::<String>()
        .to_lowercase();
    collapse_whitespace(&cleaned)
}

/// Python `repr` of a string, which is how the prompts quote literals.
pub fn py_repr_str(s: &str) -> String {
    let quote = if s.contains('\'') && !s.contains('"') { '"' } else { '\'' };
    let mut out = String::with_capacity(s.len() + 2);
    out.push(quote);
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if c == quote => {
                out.push('\\');
                out.push(c);
            }
            c => out.push(c),
        }
    }
    out.push(quote);
    out
}

/// `[([[x, y], ...], 'text'), ...]`
pub fn render_text_boxes(items: &[TextBox]) -> String {
    let parts: Vec<String> = items
        .iter()
        .map(|item| {
            let pts: Vec<String> = item.quad.iter().map(|[x, y]| format!("[{x}, {y}]")).collect();
            format!("([{}], {})", pts.join(", "), py_repr_str(&item.text))
        })
        .collect();
    format!("[{}]", parts.join(", "))
}

/// `['a', 'b']`
pub fn render_text_list(items: &[TextBox]) -> String {
    let parts: Vec<String> = items.iter().map(|i| py_repr_str(&i.text)).collect();
    format!("[{}]", parts.join(", "))
}

pub fn option_letter(i: usize) -> char {
    (b'A' + (i % 26) as u8) as char
}

/// `(A) first (B) second`
pub fn render_options(options: &[String]) -> String {
    options
        .iter()
        .enumerate()
        .map(|(i, o)| format!("({}) {}", option_letter(i), o))
        .collect::<Vec<_>>()
        .join(" ")
}

fn metadata_value(v: &str) -> String {
    let is_int = !v.is_empty()
        && v.strip_prefix('-').unwrap_or(v).chars().all(|c| c.is_ascii_digit())
        && v != "-";
    if is_int || v == "True" || v == "False" || v == "None" {
        v.to_string()
    } else {
        py_repr_str(v)
    }
}

/// Python-dict rendering: `{'pid': 19, 'has_image': True, 'subject': 'natural science'}`
pub fn render_metadata(meta: &IndexMap<String, String>) -> String {
    let parts: Vec<String> = meta
        .iter()
        .map(|(k, v)| format!("{}: {}", py_repr_str(k), metadata_value(v)))
        .collect();
    format!("{{{}}}", parts.join(", "))
}

/// Removes Markdown code fences around a completion, keeping only the fenced code.
pub fn strip_code_fences(s: &str) -> String {
    let trimmed = s.trim();
    if !trimmed.lines().any(|l| l.trim_start().starts_with("```")) {
        return trimmed.to_string();
    }
    let mut inside = false;
    let mut inner = Vec::new();
    for line in trimmed.lines() {
        if line.trim_start().starts_with("```") {
            inside = !inside;
        } else if inside {
            inner.push(line);
        }
    }
    inner.join("\n").trim_end().to_string()
}
