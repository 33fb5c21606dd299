//! Row and column pruning of the query table.

use crate::text::strip_code_fences;
use crate::types::{parse_table, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Columns,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LookupRejection {
    Unparsable(String),
    UnknownRow(usize),
    UnknownColumn(String),
}

fn cells(row: &[String]) -> Vec<&str> {
    row.iter().map(|c| c.trim()).collect()
}

/// Strips fences, echoed labels and title lines from a lookup completion.
fn table_text(completion: &str) -> String {
    let body = strip_code_fences(completion);
    body.lines()
        .map(str::trim_end)
        .filter(|l| !l.trim_start().starts_with("[TITLE]:"))
        .map(|l| l.trim_start().strip_prefix("Simplified Table:").map(str::trim_start).unwrap_or(l))
        .filter(|l| !l.trim().is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parses a simplified table and checks it against the original.
///
/// Rows must each be an original row. Columns are matched by header and the
/// original columns are projected, so cell values always come from the input.
pub fn accept_lookup(completion: &str, original: &Table, axis: Axis) -> Result<Table, LookupRejection> {
    let text = table_text(completion);
    let parsed = parse_table(&text).map_err(|e| LookupRejection::Unparsable(e.to_string()))?;
    let result = match axis {
        Axis::Rows => {
            for (i, row) in parsed.rows.iter().enumerate() {
                if !original.rows.iter().any(|o| cells(o) == cells(row)) {
                    return Err(LookupRejection::UnknownRow(i));
                }
            }
            Table::from_rows(parsed.rows.clone()).map_err(|e| LookupRejection::Unparsable(e.to_string()))?
        }
        Axis::Columns => {
            let header = cells(original.header());
            let wanted = cells(parsed.header());
            let mut indices = Vec::with_capacity(wanted.len());
            for name in wanted {
                let idx = header.iter().position(|h| *h == name).ok_or_else(|| LookupRejection::UnknownColumn(name.to_string()))?;
                indices.push(idx);
            }
            let rows = original
                .rows
                .iter()
                .map(|r| indices.iter().map(|&i| r.get(i).cloned().unwrap_or_default()).collect())
                .collect();
            Table::from_rows(rows).map_err(|e| LookupRejection::Unparsable(e.to_string()))?
        }
    };
    Ok(result.with_title(original.title.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn committee() -> Table {
        parse_table("Committee | Students | Teachers\nProgram | 5 | 17\nTicket | 20 | 5\nMusic | 20 | 15\nSchedule | 15 | 20\nFood | 18 | 2")
            .unwrap()
    }

    fn schedule() -> Table {
        parse_table(
            "Subject | Begin | End\nRecess | 6:15 A.M. | 7:20 A.M.\nOrchestra | 7:30 A.M. | 8:40 A.M.\nArt | 8:45 A.M. | 9:35 A.M.",
        )
        .unwrap()
    }

    #[test]
    fn accepts_music_row() {
        let t = accept_lookup("Committee | Students | Teachers\nMusic | 20 | 15", &committee(), Axis::Rows).unwrap();
        assert_eq!(t.serialize(), "Committee | Students | Teachers\nMusic | 20 | 15");
    }

    #[test]
    fn tolerates_echoed_label_and_fences() {
        let t = accept_lookup("```\nSimplified Table:\nCommittee | Students | Teachers\nMusic|20|15\n```", &committee(), Axis::Rows)
            .unwrap();
        assert_eq!(t.row_count(), 2);
    }

    #[test]
    fn rejects_invented_rows() {
        assert_eq!(
            accept_lookup("Committee | Students | Teachers\nMusic | 21 | 15", &committee(), Axis::Rows),
            Err(LookupRejection::UnknownRow(1))
        );
        assert!(matches!(accept_lookup("", &committee(), Axis::Rows), Err(LookupRejection::Unparsable(_))));
    }

    #[test]
    fn projects_columns_by_header() {
        let t = accept_lookup("Subject | End\nRecess | 7:20 A.M.", &schedule(), Axis::Columns).unwrap();
        assert_eq!(t.column_count(), 2);
        assert_eq!(t.row_count(), 4);
        assert_eq!(t.rows[3], ["Art", "9:35 A.M."]);
    }

    #[test]
    fn accepts_dropping_first_column() {
        let t = accept_lookup("End\n7:20 A.M.", &schedule(), Axis::Columns).unwrap();
        assert_eq!(t.header(), &["End".to_string()]);
    }

    #[test]
    fn rejects_unknown_columns() {
        assert_eq!(
            accept_lookup("Subject | Duration", &schedule(), Axis::Columns),
            Err(LookupRejection::UnknownColumn("Duration".into()))
        );
    }

    #[test]
    fn keeps_title() {
        let orig = committee().with_title(Some("Graduation".into()));
        let t = accept_lookup("[TITLE]: Graduation\nCommittee | Students | Teachers", &orig, Axis::Rows).unwrap();
        assert_eq!(t.title.as_deref(), Some("Graduation"));
    }
}
