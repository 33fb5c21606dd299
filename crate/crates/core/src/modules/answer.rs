//! Final answer extraction and normalization.

use crate::text::{collapse_whitespace, normalize_for_match};
use crate::types::{Answer, Cache, CacheKey, CacheValue, Flag, Query, Task};
use regex::Regex;
use rust_decimal::prelude::*;
use std::sync::OnceLock;

fn letter_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i:the answer is)\s*:?\s*\(?([A-Z])\)?(?:[^A-Za-z0-9]|$)").unwrap())
}

fn snippet_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i:the answer is)\s*:?\s*(.+)").unwrap())
}

/// Parses a numeric answer: currency, thousands separators, percent signs and
/// spaces are dropped; `a/b` fractions are evaluated.
pub fn parse_number(s: &str) -> Option<Decimal> {
    let cleaned: String = s
        .trim()
        .trim_end_matches('.')
        .chars()
        .filter(|c| !matches!(c, '$' | ',' | '%' | ' ' | '\u{a0}'))
        .collect();
    if cleaned.is_empty() {
        return None;
    }
    if let Some((n, d)) = cleaned.split_once('/') {
        let n = parse_plain(n)?;
        let d = parse_plain(d)?;
        if d.is_zero() {
            return None;
        }
        return n.checked_div(d);
    }
    parse_plain(&cleaned)
}

fn parse_plain(s: &str) -> Option<Decimal> {
    let valid = !s.is_empty()
        && s.chars().all(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E'))
        && s.chars().any(|c| c.is_ascii_digit());
    if !valid {
        return None;
    }
    Decimal::from_str(s).ok().or_else(|| Decimal::from_scientific(s).ok())
}

/// Two-place rounding (half away from zero), always rendered with two decimals.
pub fn round2(d: Decimal) -> Decimal {
    let mut r = d.round_dp_with_strategy(2, RoundingStrategy::MidpointAwayFromZero);
    if r.is_zero() {
        r.set_sign_positive(true);
    }
    r.rescale(2);
    r
}

pub fn normalize_number(s: &str) -> Option<(String, Decimal)> {
    let v = round2(parse_number(s)?);
    Some((v.to_string(), v))
}

/// The option most similar to `text`: exact normalized match, else highest
/// normalized Levenshtein similarity, ties to the lowest index.
pub fn most_similar_option(text: &str, options: &[String]) -> Option<usize> {
    if options.is_empty() {
        return None;
    }
    let target = normalize_for_match(text);
    if let Some(i) = options.iter().position(|o| normalize_for_match(o) == target) {
        return Some(i);
    }
    let mut best = (0usize, f64::MIN);
    for (i, o) in options.iter().enumerate() {
        let score = strsim::normalized_levenshtein(&target, &normalize_for_match(o));
        if score > best.1 {
            best = (i, score);
        }
    }
    Some(best.0)
}

/// Text following the last "the answer is", trimmed of trailing punctuation and quotes.
pub fn answer_snippet(text: &str) -> Option<String> {
    let m = snippet_re().captures_iter(text).last()?;
    let s = m[1].lines().next().unwrap_or("").trim();
    let s = s.trim_end_matches(['.', '!', ' ']).trim_matches(['"', '\'', '`', ' ']);
    if s.is_empty() {
        None
    } else {
        Some(s.to_string())
    }
}

fn answer_letter(text: &str, n_options: usize) -> Option<usize> {
    let c = letter_re().captures_iter(text).last()?;
    let letter = c[1].chars().next()?;
    if !letter.is_ascii_uppercase() {
        return None;
    }
    let idx = (letter as u8 - b'A') as usize;
    (idx < n_options).then_some(idx)
}

fn choice_answer(raw: &str, text: &str, options: &[String]) -> Answer {
    let idx = answer_letter(text, options.len())
        .or_else(|| most_similar_option(&answer_snippet(text).unwrap_or_else(|| text.trim().to_string()), options))
        .expect("options are non-empty");
    Answer { raw: raw.to_string(), normalized: options[idx].clone(), option_index: Some(idx), numeric_value: None }
}

/// Normalizes a candidate answer text for `q`.
pub fn normalize_answer(q: &Query, raw: &str, from_solution: bool) -> Answer {
    let text = raw.trim();
    if text.is_empty() {
        return Answer::sentinel();
    }
    if !q.options.is_empty() {
        return choice_answer(raw, text, &q.options);
    }
    let core = if from_solution { answer_snippet(text).unwrap_or_else(|| text.to_string()) } else { text.to_string() };
    match q.task {
        Task::TabMWP => match normalize_number(&core) {
            Some((normalized, value)) => Answer { raw: raw.to_string(), normalized, option_index: None, numeric_value: Some(value) },
            None => Answer::text(raw, collapse_whitespace(&core)),
        },
        Task::ScienceQA => Answer::text(raw, collapse_whitespace(&core)),
    }
}

/// Picks the answer source from the cache and normalizes it. Total: falls back to the sentinel.
pub fn generate_answer(q: &Query, c: &Cache) -> (Answer, Vec<Flag>) {
    let mut flags = Vec::new();
    let rejected = matches!(
        c.latest(CacheKey::ProgramVerdict).map(|e| &e.value),
        Some(CacheValue::Verdict { ok: false, .. })
    );
    let execution = c.latest_text(CacheKey::ExecutionResult).filter(|s| !s.trim().is_empty());
    let solution = c.latest_text(CacheKey::Solution).filter(|s| !s.trim().is_empty());
    let source = match (execution, solution) {
        (Some(_), Some(sol)) if rejected => {
            flags.push(Flag::PreferredSolutionOverRejectedProgram);
            Some((sol, true))
        }
        (Some(exec), _) => Some((exec, false)),
        (None, Some(sol)) => Some((sol, true)),
        (None, None) => None,
    };
    match source {
        Some((text, from_solution)) => (normalize_answer(q, text, from_solution), flags),
        None => (Answer::sentinel(), flags),
    }
}
