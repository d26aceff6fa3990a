//! Weighted two-way tables with marginals.

use serde::{Deserialize, Serialize};

use super::table::{Cell, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weight {
    Count,
    FloorAreaM2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    ColumnPct,
}

pub const UNBINNED: &str = "Unbinned";

/// Raw weights per (row, column). When `unbinned` is set the last row and
/// the last column hold values that fell outside the binning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossTab {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub cells: Vec<Vec<f64>>,
    pub weight: Weight,
    pub normalization: Normalization,
    pub unbinned_row: bool,
    pub unbinned_col: bool,
}

impl CrossTab {
    pub fn new(row_labels: Vec<String>, col_labels: Vec<String>, weight: Weight, normalization: Normalization) -> Self {
        let cells = vec![vec![0.0; col_labels.len()]; row_labels.len()];
        CrossTab { row_labels, col_labels, cells, weight, normalization, unbinned_row: false, unbinned_col: false }
    }

    pub fn with_unbinned_row(mut self) -> Self {
        self.row_labels.push(UNBINNED.into());
        self.cells.push(vec![0.0; self.col_labels.len()]);
        self.unbinned_row = true;
        self
    }

    pub fn with_unbinned_col(mut self) -> Self {
        self.col_labels.push(UNBINNED.into());
        for r in &mut self.cells {
            r.push(0.0);
        }
        self.unbinned_col = true;
        self
    }

    /// `None` routes to the unbinned margin.
    pub fn add(&mut self, row: Option<usize>, col: Option<usize>, w: f64) {
        let r = row.unwrap_or_else(|| {
            assert!(self.unbinned_row, "row outside binning without an unbinned margin");
            self.row_labels.len() - 1
        });
        let c = col.unwrap_or_else(|| {
            assert!(self.unbinned_col, "column outside binning without an unbinned margin");
            self.col_labels.len() - 1
        });
        self.cells[r][c] += w;
    }

    pub fn get(&self, row: &str, col: &str) -> Option<f64> {
        let r = self.row_labels.iter().position(|l| l == row)?;
        let c = self.col_labels.iter().position(|l| l == col)?;
        Some(self.cells[r][c])
    }

    pub fn row_totals(&self) -> Vec<f64> {
        self.cells.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_totals(&self) -> Vec<f64> {
        (0..self.col_labels.len()).map(|c| self.cells.iter().map(|r| r[c]).sum()).collect()
    }

    pub fn grand_total(&self) -> f64 {
        self.cells.iter().flatten().sum()
    }

    /// Share of each cell in its column; `None` for empty columns.
    pub fn column_pct(&self) -> Vec<Vec<Option<f64>>> {
        let totals = self.col_totals();
        self.cells
            .iter()
            .map(|r| r.iter().zip(&totals).map(|(v, t)| (*t > 0.0).then(|| 100.0 * v / t)).collect())
            .collect()
    }

    /// Share of each row total in the grand total.
    pub fn total_pct(&self) -> Vec<Option<f64>> {
        let g = self.grand_total();
        self.row_totals().into_iter().map(|t| (g > 0.0).then(|| 100.0 * t / g)).collect()
    }

    /// Mass on cells whose row and column labels coincide, over the grand
    /// total including unbinned pairs.
    pub fn agreement(&self) -> Option<f64> {
        let g = self.grand_total();
        if g <= 0.0 {
            return None;
        }
        let nr = self.row_labels.len() - usize::from(self.unbinned_row);
        let nc = self.col_labels.len() - usize::from(self.unbinned_col);
        let mut diag = 0.0;
        for r in 0..nr {
            if let Some(c) = self.col_labels[..nc].iter().position(|l| *l == self.row_labels[r]) {
                diag += self.cells[r][c];
            }
        }
        Some(diag / g)
    }

    fn value_cell(&self, v: f64) -> Cell {
        match self.weight {
            Weight::Count => Cell::count(v.round() as i64),
            Weight::FloorAreaM2 => Cell::number(v, 2),
        }
    }

    /// Renders in table orientation. Empty unbinned margins are omitted.
    /// Column-normalised tables get a total-share column and a closing row
    /// of raw column totals (Mm² or counts); plain tables get totals.
    pub fn to_table(&self, name: &str, title: &str, row_header: &str, pct_decimals: usize) -> Table {
        let row_totals = self.row_totals();
        let col_totals = self.col_totals();
        let keep_row: Vec<bool> = (0..self.row_labels.len())
            .map(|r| !(self.unbinned_row && r == self.row_labels.len() - 1 && row_totals[r] == 0.0))
            .collect();
        let keep_col: Vec<bool> = (0..self.col_labels.len())
            .map(|c| !(self.unbinned_col && c == self.col_labels.len() - 1 && col_totals[c] == 0.0))
            .collect();
        let mut columns: Vec<String> =
            self.col_labels.iter().zip(&keep_col).filter(|(_, k)| **k).map(|(l, _)| l.clone()).collect();
        columns.push("Total".into());
        let mut t = Table::new(name, title, row_header, columns);
        match self.normalization {
            Normalization::None => {
                for (r, label) in self.row_labels.iter().enumerate().filter(|(r, _)| keep_row[*r]) {
                    let mut cells: Vec<Cell> =
                        (0..self.col_labels.len()).filter(|c| keep_col[*c]).map(|c| self.value_cell(self.cells[r][c])).collect();
                    cells.push(self.value_cell(row_totals[r]));
                    t.push(label.clone(), cells);
                }
                let mut cells: Vec<Cell> =
                    (0..self.col_labels.len()).filter(|c| keep_col[*c]).map(|c| self.value_cell(col_totals[c])).collect();
                cells.push(self.value_cell(self.grand_total()));
                t.push("Total", cells);
            }
            Normalization::ColumnPct => {
                let pct = self.column_pct();
                let total_pct = self.total_pct();
                for (r, label) in self.row_labels.iter().enumerate().filter(|(r, _)| keep_row[*r]) {
                    let mut cells: Vec<Cell> = (0..self.col_labels.len())
                        .filter(|c| keep_col[*c])
                        .map(|c| Cell::percent(pct[r][c], pct_decimals))
                        .collect();
                    cells.push(Cell::percent(total_pct[r], pct_decimals));
                    t.push(label.clone(), cells);
                }
                let (label, scale, make): (&str, f64, fn(f64) -> Cell) = match self.weight {
                    Weight::FloorAreaM2 => ("Total [Mm²]", 1e-6, |v| Cell::number(v, 2)),
                    Weight::Count => ("Total [pc]", 1.0, |v| Cell::count(v.round() as i64)),
                };
                let mut cells: Vec<Cell> =
                    (0..self.col_labels.len()).filter(|c| keep_col[*c]).map(|c| make(col_totals[c] * scale)).collect();
                cells.push(make(self.grand_total() * scale));
                t.push(label, cells);
            }
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn two_by_two_renders_a_three_by_three_grid() {
        let mut x = CrossTab::new(labels(&["a", "b"]), labels(&["a", "b"]), Weight::Count, Normalization::None);
        x.add(Some(0), Some(0), 3.0);
        x.add(Some(0), Some(1), 1.0);
        x.add(Some(1), Some(1), 2.0);
        let csv = x.to_table("t", "t", "r", 2).to_csv();
        assert_eq!(csv, "r,a,b,Total\na,3,1,4\nb,0,2,2\nTotal,3,3,6\n");
        assert_eq!(x.agreement(), Some(5.0 / 6.0));
    }

    #[test]
    fn unbinned_mass_is_kept_and_rendered() {
        let mut x = CrossTab::new(labels(&["a"]), labels(&["a"]), Weight::Count, Normalization::None)
            .with_unbinned_row()
            .with_unbinned_col();
        x.add(Some(0), Some(0), 1.0);
        x.add(Some(0), None, 1.0);
        assert_eq!(x.grand_total(), 2.0);
        assert_eq!(x.agreement(), Some(0.5));
        let t = x.to_table("t", "t", "r", 2);
        assert_eq!(t.columns, labels(&["a", UNBINNED, "Total"]));
        assert_eq!(t.rows.len(), 2, "empty unbinned row omitted");
    }

    #[test]
    fn column_pct_and_empty_columns() {
        let mut x = CrossTab::new(labels(&["1", "2"]), labels(&["g", "h"]), Weight::FloorAreaM2, Normalization::ColumnPct);
        x.add(Some(0), Some(0), 1_000_000.0);
        x.add(Some(1), Some(0), 3_000_000.0);
        let t = x.to_table("t", "t", "v", 3);
        assert_eq!(t.cell("1", "g").unwrap().display(), "25.000%");
        assert_eq!(t.cell("1", "h").unwrap().display(), "n/a");
        assert_eq!(t.cell("Total [Mm²]", "g").unwrap().display(), "4.00");
        assert_eq!(t.cell("Total [Mm²]", "h").unwrap().display(), "0.00");
    }
}
