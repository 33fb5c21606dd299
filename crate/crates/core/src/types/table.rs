//! Text-grid tables in the `a | b` newline-separated layout used by the prompts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CELL_SEPARATOR: &str = " | ";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TableError {
    #[error("table text has no non-blank lines")]
    EmptyTable,
    #[error("row {row} cell {cell} contains a column separator and cannot be serialized")]
    AmbiguousCell { row: usize, cell: usize },
    #[error("row {0} has no cells")]
    EmptyRow(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub rows: Vec<Vec<String>>,
    #[serde(default)]
    pub raw_text: String,
}

impl Table {
    /// Builds a table from cell texts, checking that every cell survives serialization.
    pub fn from_rows(rows: Vec<Vec<String>>) -> Result<Self, TableError> {
        if rows.is_empty() {
            return Err(TableError::EmptyTable);
        }
        for (r, row) in rows.iter().enumerate() {
            if row.is_empty() {
                return Err(TableError::EmptyRow(r));
            }
            for (c, cell) in row.iter().enumerate() {
                if cell.contains('|') || cell.contains('\n') {
                    return Err(TableError::AmbiguousCell { row: r, cell: c });
                }
            }
        }
        let mut table = Table { title: None, rows, raw_text: String::new() };
        table.raw_text = table.serialize();
        Ok(table)
    }

    pub fn with_title(mut self, title: Option<String>) -> Self {
        self.title = title.filter(|t| !t.trim().is_empty());
        self
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn column_count(&self) -> usize {
        self.rows.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Rows times the widest row, header included.
    pub fn cell_count(&self) -> usize {
        self.row_count() * self.column_count()
    }

    pub fn header(&self) -> &[String] {
        self.rows.first().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn serialize(&self) -> String {
        serialize_table(self)
    }

    /// Same grid and title; `raw_text` is ignored.
    pub fn same_content(&self, other: &Table) -> bool {
        self.rows == other.rows && self.title == other.title
    }
}

pub fn parse_table(raw: &str) -> Result<Table, TableError> {
    let rows: Vec<Vec<String>> = raw
        .lines()
        .filter(|line| !line.trim().is_empty())
        .map(|line| line.split('|').map(|cell| cell.trim().to_string()).collect())
        .collect();
    if rows.is_empty() {
        return Err(TableError::EmptyTable);
    }
    Ok(Table { title: None, rows, raw_text: raw.to_string() })
}

pub fn serialize_table(table: &Table) -> String {
    table
        .rows
        .iter()
        .map(|row| row.join(CELL_SEPARATOR))
        .collect::<Vec<_>>()
        .join("\n")
}
