//! Rendered report tables and their CSV and markdown forms.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::artifacts::{write_atomic, ArtifactError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Cell {
    Count { value: i64 },
    Number { value: f64, decimals: usize },
    Percent { value: f64, decimals: usize },
    /// Empty denominator.
    NotAvailable,
    Blank,
}

impl Cell {
    pub fn count(v: impl Into<i64>) -> Cell {
        Cell::Count { value: v.into() }
    }

    pub fn number(value: f64, decimals: usize) -> Cell {
        Cell::Number { value, decimals }
    }

    pub fn percent(value: Option<f64>, decimals: usize) -> Cell {
        match value {
            Some(value) => Cell::Percent { value, decimals },
            None => Cell::NotAvailable,
        }
    }

    /// Full-precision form used in CSV.
    pub fn raw(&self) -> String {
        match self {
            Cell::Count { value } => value.to_string(),
            Cell::Number { value, .. } | Cell::Percent { value, .. } => format!("{value}"),
            Cell::NotAvailable => "n/a".into(),
            Cell::Blank => String::new(),
        }
    }

    /// Display form used in markdown.
    pub fn display(&self) -> String {
        match self {
            Cell::Count { value } => value.to_string(),
            Cell::Number { value, decimals } => round_half_up(*value, *decimals),
            Cell::Percent { value, decimals } => format!("{}%", round_half_up(*value, *decimals)),
            Cell::NotAvailable => "n/a".into(),
            Cell::Blank => String::new(),
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Cell::Count { value } => Some(*value as f64),
            Cell::Number { value, .. } | Cell::Percent { value, .. } => Some(*value),
            _ => None,
        }
    }
}

/// Rounds the shortest decimal representation of `v` half away from zero.
/// Working on the decimal string keeps `0.0015` at 3 decimals as `0.002`,
/// which binary rounding would turn into `0.001`.
pub fn round_half_up(v: f64, decimals: usize) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    let s = format!("{}", v.abs());
    let (int, frac) = s.split_once('.').unwrap_or((&s, ""));
    let mut digits: Vec<u8> = int.bytes().chain(frac.bytes().chain(std::iter::repeat(b'0')).take(decimals)).collect();
    let round_up = frac.as_bytes().get(decimals).is_some_and(|&d| d >= b'5');
    if round_up {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, b'1');
                break;
            }
            i -= 1;
            if digits[i] == b'9' {
                digits[i] = b'0';
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let split = digits.len() - decimals;
    let mut out = String::from_utf8(digits[..split].to_vec()).expect("ascii digits");
    if decimals > 0 {
        out.push('.');
        out.push_str(std::str::from_utf8(&digits[split..]).expect("ascii digits"));
    }
    if v < 0.0 && out.bytes().any(|b| (b'1'..=b'9').contains(&b)) {
        out.insert(0, '-');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub label: String,
    pub cells: Vec<Cell>,
}

/// A report table. `columns` excludes the row
/// header and every row has one cell per column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub title: String,
    pub row_header: String,
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
    pub notes: Vec<String>,
}

impl Table {
    pub fn new(name: &str, title: &str, row_header: &str, columns: Vec<String>) -> Table {
        Table {
            name: name.into(),
            title: title.into(),
            row_header: row_header.into(),
            columns,
            rows: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn push(&mut self, label: impl Into<String>, cells: Vec<Cell>) {
        assert_eq!(cells.len(), self.columns.len(), "row width matches header");
        self.rows.push(Row { label: label.into(), cells });
    }

    pub fn row(&self, label: &str) -> Option<&Row> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn cell(&self, row: &str, col: &str) -> Option<&Cell> {
        let c = self.columns.iter().position(|c| c == col)?;
        self.row(row).map(|r| &r.cells[c])
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let header = std::iter::once(self.row_header.as_str()).chain(self.columns.iter().map(String::as_str));
        w.write_record(header).expect("in-memory write");
        for r in &self.rows {
            let rec = std::iter::once(r.label.clone()).chain(r.cells.iter().map(Cell::raw));
            w.write_record(rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
    }

    pub fn to_markdown(&self) -> String {
        let esc = |s: &str| s.replace('|', "\\|");
        let mut out = format!("## {}\n\n", self.title);
        out.push_str(&format!(
            "| {} |{}\n",
            esc(&self.row_header),
            self.columns.iter().map(|c| format!(" {} |", esc(c))).collect::<String>()
        ));
        out.push_str(&format!("|---|{}\n", "---:|".repeat(self.columns.len())));
        for r in &self.rows {
            out.push_str(&format!(
                "| {} |{}\n",
                esc(&r.label),
                r.cells.iter().map(|c| format!(" {} |", c.display())).collect::<String>()
            ));
        }
        for n in &self.notes {
            out.push_str(&format!("\n{n}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
        }
    }
}

/// Writes `<dir>/<name>.<ext>` atomically.
pub fn export_report(table: &Table, format: ReportFormat, dir: &Path) -> Result<PathBuf, ArtifactError> {
    let path = dir.join(format!("{}.{}", table.name, format.extension()));
    let body = match format {
        ReportFormat::Csv => table.to_csv(),
        ReportFormat::Markdown => table.to_markdown(),
    };
    write_atomic(&path, body.as_bytes())?;
    Ok(path)
}

/// Writes both formats of every table plus `index.md`.
pub fn export_all(tables: &[Table], dir: &Path) -> Result<Vec<PathBuf>, ArtifactError> {
    let mut written = Vec::new();
    for t in tables {
        written.push(export_report(t, ReportFormat::Csv, dir)?);
        written.push(export_report(t, ReportFormat::Markdown, dir)?);
    }
    let mut index = String::from("# Reports\n\n");
    for t in tables {
        index.push_str(&format!("- [{}]({}.md) ([csv]({}.csv))\n", t.title, t.name, t.name));
    }
    let path = dir.join("index.md");
    write_atomic(&path, index.as_bytes())?;
    written.push(path);
    Ok(written)
}
