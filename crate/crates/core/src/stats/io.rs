//! Result matrices and their CSV form.
//!
//! Schema: header `augmentation,<col>,<col>,...`, one row per augmentation
//! condition. Lines starting with `#` are comments (the sweep writer embeds
//! the config hash there). A row labelled `none` / `0` / `no augmentation`
//! is the baseline and can be split off before analysis.

use std::path::Path;

use super::StatsError;

#[derive(Debug, Clone, PartialEq)]
pub struct ResultMatrix {
    row_labels: Vec<String>,
    col_labels: Vec<String>,
    cells: Vec<Vec<f64>>,
}

impl ResultMatrix {
    pub fn new(
        row_labels: Vec<String>,
        col_labels: Vec<String>,
        cells: Vec<Vec<f64>>,
    ) -> Result<Self, StatsError> {
        if cells.len() != row_labels.len() {
            return Err(StatsError::Schema(format!(
                "{} rows vs {} labels",
                cells.len(),
                row_labels.len()
            )));
        }
        for (i, row) in cells.iter().enumerate() {
            if row.len() != col_labels.len() {
                return Err(StatsError::Schema(format!(
                    "row {i} has {} cells, want {}",
                    row.len(),
                    col_labels.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(StatsError::Schema(format!("row {i} has non-finite cells")));
            }
        }
        Ok(Self {
            row_labels,
            col_labels,
            cells,
        })
    }

    pub fn rows(&self) -> usize {
        self.cells.len()
    }

    pub fn cols(&self) -> usize {
        self.col_labels.len()
    }

    pub fn cells(&self) -> &[Vec<f64>] {
        &self.cells
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn col_labels(&self) -> &[String] {
        &self.col_labels
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.cells.iter().map(|row| row[j]).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.cells.iter().flatten().copied().collect()
    }

    fn is_baseline_label(label: &str) -> bool {
        let l = label.trim().to_ascii_lowercase();
        l == "none" || l == "0" || l == "no augmentation" || l == "no_augmentation"
    }

    /// Splits off the baseline row, returning (matrix without baseline,
    /// baseline row values if present).
    pub fn split_baseline(&self) -> (ResultMatrix, Option<Vec<f64>>) {
        let mut baseline = None;
        let mut row_labels = Vec::new();
        let mut cells = Vec::new();
        for (label, row) in self.row_labels.iter().zip(&self.cells) {
            if baseline.is_none() && Self::is_baseline_label(label) {
                baseline = Some(row.clone());
            } else {
                row_labels.push(label.clone());
                cells.push(row.clone());
            }
        }
        (
            ResultMatrix {
                row_labels,
                col_labels: self.col_labels.clone(),
                cells,
            },
            baseline,
        )
    }
}

pub fn load_result_csv(path: &Path) -> Result<ResultMatrix, StatsError> {
    let text = std::fs::read_to_string(path)?;
    parse_result_csv(&text)
}

pub fn parse_result_csv(text: &str) -> Result<ResultMatrix, StatsError> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines
        .next()
        .ok_or_else(|| StatsError::Schema("empty csv".to_string()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 3 || !cols[0].eq_ignore_ascii_case("augmentation") {
        return Err(StatsError::Schema(format!(
            "header must be 'augmentation,<col>,...', got '{header}'"
        )));
    }
    let col_labels: Vec<String> = cols[1..].iter().map(|s| s.to_string()).collect();
    let mut row_labels = Vec::new();
    let mut cells = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let toks: Vec<&str> = line.split(',').map(str::trim).collect();
        if toks.len() != col_labels.len() + 1 {
            return Err(StatsError::Schema(format!(
                "line {}: want {} fields, got {}",
                lineno + 2,
                col_labels.len() + 1,
                toks.len()
            )));
        }
        row_labels.push(toks[0].to_string());
        let row: Result<Vec<f64>, _> = toks[1..].iter().map(|t| t.parse::<f64>()).collect();
        cells.push(row.map_err(|e| StatsError::Schema(format!("line {}: {e}", lineno + 2)))?);
    }
    ResultMatrix::new(row_labels, col_labels, cells)
}
