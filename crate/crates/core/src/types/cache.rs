use serde::{Deserialize, Serialize};
use std::fmt;
use tracing::debug;

/// One kind of intermediate artifact a module can leave behind for later steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheKey {
    ImageCaption,
    DetectedText,
    Knowledge,
    SearchQuery,
    SearchResponse,
    TableDescription,
    GeneratedProgram,
    ProgramVerdict,
    ExecutionResult,
    Solution,
}

impl CacheKey {
    pub const ALL: [CacheKey; 10] = [
        CacheKey::ImageCaption,
        CacheKey::DetectedText,
        CacheKey::Knowledge,
        CacheKey::SearchQuery,
        CacheKey::SearchResponse,
        CacheKey::TableDescription,
        CacheKey::GeneratedProgram,
        CacheKey::ProgramVerdict,
        CacheKey::ExecutionResult,
        CacheKey::Solution,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CacheKey::ImageCaption => "image_caption",
            CacheKey::DetectedText => "detected_text",
            CacheKey::Knowledge => "knowledge",
            CacheKey::SearchQuery => "search_query",
            CacheKey::SearchResponse => "search_response",
            CacheKey::TableDescription => "table_description",
            CacheKey::GeneratedProgram => "generated_program",
            CacheKey::ProgramVerdict => "program_verdict",
            CacheKey::ExecutionResult => "execution_result",
            CacheKey::Solution => "solution",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// Keys whose payload is plain text.
    pub fn is_text(self) -> bool {
        !matches!(
            self,
            CacheKey::DetectedText | CacheKey::ProgramVerdict | CacheKey::SearchResponse
        )
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A detected text span with its four corner points.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextBox {
    #[serde(rename = "box")]
    pub quad: [[i64; 2]; 4],
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CacheValue {
    Text { text: String },
    DetectedText { items: Vec<TextBox> },
    Verdict { ok: bool, diagnostics: String },
    Passages { passages: Vec<String> },
}

impl CacheValue {
    pub fn text(s: impl Into<String>) -> Self {
        CacheValue::Text { text: s.into() }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            CacheValue::Text { text } => Some(text),
            _ => None,
        }
    }

    /// Flat rendering used for trace payloads and echo-style consumers.
    pub fn render(&self) -> String {
        match self {
            CacheValue::Text { text } => text.clone(),
            CacheValue::DetectedText { items } => crate::text::render_text_boxes(items),
            CacheValue::Verdict { ok, diagnostics } => {
                if diagnostics.is_empty() {
                    if *ok { "True".into() } else { "False".into() }
                } else {
                    format!("{}: {}", if *ok { "True" } else { "False" }, diagnostics)
                }
            }
            CacheValue::Passages { passages } => passages.join("\n\n"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: CacheKey,
    pub value: CacheValue,
    pub producer: String,
    pub step_index: usize,
}

impl CacheEntry {
    pub fn new(key: CacheKey, value: CacheValue, producer: impl Into<String>, step_index: usize) -> Self {
        CacheEntry { key, value, producer: producer.into(), step_index }
    }
}

/// Append-only store of module outputs for one run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cache {
    entries: Vec<CacheEntry>,
}

impl Cache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, entry: CacheEntry) {
        if let Some(prev) = self.latest(entry.key) {
            debug!(key = %entry.key, shadowed_step = prev.step_index, by_step = entry.step_index, "cache entry shadowed");
        }
        self.entries.push(entry);
    }

    /// Value-style put: returns the grown cache.
    pub fn with(mut self, entry: CacheEntry) -> Self {
        self.put(entry);
        self
    }

    pub fn entries(&self) -> &[CacheEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry with the greatest step index for `key`; later insertions win ties.
    pub fn latest(&self, key: CacheKey) -> Option<&CacheEntry> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.key == key)
            .max_by_key(|(i, e)| (e.step_index, *i))
            .map(|(_, e)| e)
    }

    pub fn latest_text(&self, key: CacheKey) -> Option<&str> {
        self.latest(key).and_then(|e| e.value.as_text())
    }

    pub fn contains(&self, key: CacheKey) -> bool {
        self.entries.iter().any(|e| e.key == key)
    }
}
