//! Few-shot prompt templates: instruction, demonstrations, then a test block of
//! whichever fields are present.

use crate::text::{py_repr_str, render_metadata, render_options, render_text_boxes, render_text_list};
use crate::types::{Cache, CacheKey, CacheValue, Query};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

const SHIPPED_TEMPLATES: &str = include_str!("../../data/templates.toml");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("template {template}: required field {label:?} is absent")]
    MissingRequiredField { template: String, label: String },
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("template config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Question,
    /// Question text followed by the unit and, for multiple choice, the option list.
    QuestionFull,
    Context,
    Options,
    Metadata,
    Table,
    Cache(CacheKey),
}

impl std::str::FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "question" => Source::Question,
            "question_full" => Source::QuestionFull,
            "context" => Source::Context,
            "options" => Source::Options,
            "metadata" => Source::Metadata,
            "table" => Source::Table,
            other => match other.strip_prefix("cache:").and_then(CacheKey::parse) {
                Some(k) => Source::Cache(k),
                None => return Err(format!("unknown field source {other:?}")),
            },
        })
    }
}

impl<'de> Deserialize<'de> for Source {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl Serialize for Source {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let text = match self {
            Source::Question => "question".to_string(),
            Source::QuestionFull => "question_full".to_string(),
            Source::Context => "context".to_string(),
            Source::Options => "options".to_string(),
            Source::Metadata => "metadata".to_string(),
            Source::Table => "table".to_string(),
            Source::Cache(k) => format!("cache:{k}"),
        };
        s.serialize_str(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    #[default]
    Inline,
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextStyle {
    #[default]
    Pairs,
    List,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub label: String,
    pub source: Source,
    #[serde(default)]
    pub layout: Layout,
    #[serde(default)]
    pub required: bool,
    #[serde(default)]
    pub style: TextStyle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputSpec {
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub instruction: String,
    pub fields: Vec<FieldSpec>,
    pub output: OutputSpec,
    #[serde(default)]
    pub demos: Vec<String>,
}

/// `question (unit: $) Please select from the following options: ['a', 'b'].`
pub fn full_question(q: &Query) -> String {
    let mut s = q.question.trim().to_string();
    if let Some(unit) = q.unit.as_deref().filter(|u| !u.trim().is_empty()) {
        s.push_str(&format!(" (unit: {})", unit.trim()));
    }
    if !q.options.is_empty() {
        let opts: Vec<String> = q.options.iter().map(|o| py_repr_str(o)).collect();
        s.push_str(&format!(" Please select from the following options: [{}].", opts.join(", ")));
    }
    s
}

/// Table block: optional title line, then `a | b` rows.
pub fn render_table_block(q: &Query) -> Option<String> {
    let table = q.table.as_ref()?;
    let body = table.serialize();
    Some(match table.title.as_deref().filter(|t| !t.trim().is_empty()) {
        Some(title) => format!("[TITLE]: {}\n{}", title.trim(), body),
        None => body,
    })
}

fn cache_text(value: &CacheValue, style: TextStyle) -> Option<String> {
    let s = match value {
        CacheValue::Text { text } => text.trim().to_string(),
        CacheValue::DetectedText { items } => match style {
            TextStyle::Pairs => render_text_boxes(items),
            TextStyle::List => render_text_list(items),
        },
        CacheValue::Passages { passages } => passages
            .iter()
            .map(|p| p.trim())
            .filter(|p| !p.is_empty())
            .collect::<Vec<_>>()
            .join("\n\n"),
        CacheValue::Verdict { .. } => value.render(),
    };
    if s.is_empty() {
        None
    } else {
        Some(s)
    }
}

fn source_value(field: &FieldSpec, q: &Query, c: &Cache) -> Option<String> {
    let non_empty = |s: String| if s.trim().is_empty() { None } else { Some(s) };
    match field.source {
        Source::Question => non_empty(q.question.trim().to_string()),
        Source::QuestionFull => non_empty(full_question(q)),
        Source::Context => q.context_text.clone().and_then(|s| non_empty(s.trim().to_string())),
        Source::Options => (!q.options.is_empty()).then(|| render_options(&q.options)),
        Source::Metadata => (!q.metadata.is_empty()).then(|| render_metadata(&q.metadata)),
        Source::Table => render_table_block(q),
        Source::Cache(key) => c.latest(key).and_then(|e| cache_text(&e.value, field.style)),
    }
}

fn labeled(label: &str, value: &str, layout: Layout) -> String {
    match layout {
        Layout::Inline => format!("{label} {value}"),
        Layout::Block => format!("{label}\n{value}"),
    }
}

impl PromptTemplate {
    /// The test block for `q`/`c`, ending with the output label.
    pub fn test_block(&self, q: &Query, c: &Cache, extras: &[(String, String)]) -> Result<String, PromptError> {
        let mut parts = Vec::new();
        for field in &self.fields {
            match source_value(field, q, c) {
                Some(v) => parts.push(labeled(&field.label, &v, field.layout)),
                None if field.required => {
                    return Err(PromptError::MissingRequiredField {
                        template: self.id.clone(),
                        label: field.label.clone(),
                    })
                }
                None => {}
            }
        }
        for (label, value) in extras {
            parts.push(labeled(label, value, Layout::Block));
        }
        parts.push(self.output.label.clone());
        Ok(parts.join("\n\n"))
    }

    pub fn render(&self, demo_count: usize, q: &Query, c: &Cache) -> Result<String, PromptError> {
        self.render_with(&self.instruction, &self.demos, demo_count, q, c, &[])
    }

    /// Rendering with caller-supplied instruction and demonstration pool.
    pub fn render_with(
        &self,
        instruction: &str,
        demos: &[String],
        demo_count: usize,
        q: &Query,
        c: &Cache,
        extras: &[(String, String)],
    ) -> Result<String, PromptError> {
        let mut parts: Vec<&str> = vec![instruction.trim_end()];
        parts.extend(demos.iter().take(demo_count).map(|d| d.trim()));
        let test = self.test_block(q, c, extras)?;
        parts.push(&test);
        Ok(parts.join("\n\n"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TemplateSet {
    templates: BTreeMap<String, PromptTemplate>,
}

#[derive(Deserialize)]
struct TemplateFile {
    #[serde(default)]
    template: Vec<PromptTemplate>,
}

impl TemplateSet {
    pub fn shipped() -> Self {
        Self::default().merge_toml_str(SHIPPED_TEMPLATES).expect("shipped templates are valid")
    }

    /// Adds or replaces templates from a TOML document of `[[template]]` tables.
    pub fn merge_toml_str(mut self, text: &str) -> Result<Self, PromptError> {
        let file: TemplateFile = toml::from_str(text).map_err(|e| PromptError::Config(e.to_string()))?;
        for t in file.template {
            if t.output.label.trim().is_empty() {
                return Err(PromptError::Config(format!("template {} has an empty output label", t.id)));
            }
            self.templates.insert(t.id.clone(), t);
        }
        Ok(self)
    }

    pub fn merge_file(self, path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|e| PromptError::Config(format!("{}: {e}", path.display())))?;
        self.merge_toml_str(&text)
    }

    pub fn get(&self, id: &str) -> Result<&PromptTemplate, PromptError> {
        self.templates.get(id).ok_or_else(|| PromptError::UnknownTemplate(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.templates.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}
