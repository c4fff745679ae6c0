//! Confusion matrices, the five reported scores, and fold aggregation.
//!
//! Zero-division rule: a class that is never predicted has precision 0; a
//! class absent from the evaluated fold has zero support and therefore no
//! weight in the weighted averages.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("y_true has {0} entries but y_pred has {1}")]
    LengthMismatch(usize, usize),
    #[error("class index {index} out of range for {n_classes} classes")]
    IndexOutOfRange { index: usize, n_classes: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("class weights do not match the confusion matrix row sums")]
    WeightMismatch,
    #[error("no reports to aggregate")]
    EmptyList,
}

/// `cells[t * n + p]` counts samples of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n_classes: usize,
    cells: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(n_classes: usize) -> Self {
        ConfusionMatrix { n_classes, cells: vec![0; n_classes * n_classes] }
    }

    /// Builds a matrix from explicit counts (row = true class).
    pub fn from_cells(n_classes: usize, cells: Vec<u64>) -> Self {
        assert_eq!(cells.len(), n_classes * n_classes);
        ConfusionMatrix { n_classes, cells }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, t: usize, p: usize) -> u64 {
        self.cells[t * self.n_classes + p]
    }

    pub fn add(&mut self, t: usize, p: usize) {
        self.cells[t * self.n_classes + p] += 1;
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes).map(|c| self.get(c, c)).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        (0..self.n_classes).map(|t| (0..self.n_classes).map(|p| self.get(t, p)).sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.n_classes).map(|p| (0..self.n_classes).map(|t| self.get(t, p)).sum()).collect()
    }

    /// Adds another matrix of the same size cell by cell.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.n_classes, other.n_classes);
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            *a += b;
        }
    }
}

pub fn confusion(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<ConfusionMatrix, MetricsError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricsError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    let mut cm = ConfusionMatrix::zeros(n_classes);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        for index in [t, p] {
            if index >= n_classes {
                return Err(MetricsError::IndexOutOfRange { index, n_classes });
            }
        }
        cm.add(t, p);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub weighted_precision: f64,
    pub micro_precision: f64,
    pub weighted_recall: f64,
    pub micro_recall: f64,
}

impl MetricsReport {
    pub const NAMES: [&'static str; 5] =
        ["Accuracy", "Weighted Precision", "Micro Precision", "Weighted Recall", "Micro Recall"];

    pub fn values(&self) -> [f64; 5] {
        [self.accuracy, self.weighted_precision, self.micro_precision, self.weighted_recall, self.micro_recall]
    }

    fn from_values(v: [f64; 5]) -> Self {
        MetricsReport {
            accuracy: v[0],
            weighted_precision: v[1],
            micro_precision: v[2],
            weighted_recall: v[3],
            micro_recall: v[4],
        }
    }
}

/// Computes the five scores. `weights` are the per-class true counts used for
/// the weighted averages and must equal the matrix row sums.
pub fn compute_metrics(cm: &ConfusionMatrix, weights: &[u64]) -> Result<MetricsReport, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let rows = cm.row_sums();
    if weights != rows.as_slice() {
        return Err(MetricsError::WeightMismatch);
    }
    let cols = cm.col_sums();
    let pooled = cm.trace() as f64 / total as f64;

    let mut wp = 0.0;
    let mut wr = 0.0;
    let mut support = 0u64;
    for c in 0..cm.n_classes() {
        let w = weights[c];
        if w == 0 {
            continue;
        }
        let tp = cm.get(c, c) as f64;
        let precision = if cols[c] == 0 { 0.0 } else { tp / cols[c] as f64 };
        let recall = tp / rows[c] as f64;
        wp += w as f64 * precision;
        wr += w as f64 * recall;
        support += w;
    }
    let support = support as f64;
    Ok(MetricsReport {
        accuracy: pooled,
        weighted_precision: wp / support,
        micro_precision: pooled,
        weighted_recall: wr / support,
        micro_recall: pooled,
    })
}

/// Scores a prediction vector directly.
pub fn evaluate(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<MetricsReport, MetricsError> {
    let cm = confusion(y_true, y_pred, n_classes)?;
    compute_metrics(&cm, &cm.row_sums())
}

/// Mean and sample standard deviation of each score over folds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub k: usize,
    pub mean: MetricsReport,
    pub std: MetricsReport,
}

pub fn aggregate(reports: &[MetricsReport]) -> Result<AggregateReport, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::EmptyList);
    }
    let n = reports.len() as f64;
    // Accumulate offsets from the first report so identical inputs give an
    // exact mean (and hence an exact zero spread).
    let origin = reports[0].values();
    let mut mean = [0.0; 5];
    for r in reports {
        for ((m, v), o) in mean.iter_mut().zip(r.values()).zip(origin) {
            *m += v - o;
        }
    }
    for (m, o) in mean.iter_mut().zip(origin) {
        *m = o + *m / n;
    }
    let mut std = [0.0; 5];
    if reports.len() > 1 {
        for r in reports {
            for ((s, v), m) in std.iter_mut().zip(r.values()).zip(mean) {
                *s += (v - m).powi(2);
            }
        }
        std.iter_mut().for_each(|s| *s = (*s / (n - 1.0)).sqrt());
    }
    Ok(AggregateReport {
        k: reports.len(),
        mean: MetricsReport::from_values(mean),
        std: MetricsReport::from_values(std),
    })
}

/// `"0.84±0.01"`.
pub fn format_pm(mean: f64, std: f64) -> String {
    format!("{mean:.2}±{std:.2}")
}

impl AggregateReport {
    pub fn cells(&self) -> [String; 5] {
        let m = self.mean.values();
        let s = self.std.values();
        std::array::from_fn(|i| format_pm(m[i], s[i]))
    }
}

/// One line of a results table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub name: String,
    pub outcome: Result<AggregateReport, String>,
}

/// Renders rows as an aligned plain-text table with the five score columns.
pub fn render_text_table(title: &str, rows: &[TableRow]) -> String {
    let mut header = vec!["Algorithm".to_string()];
    header.extend(MetricsReport::NAMES.iter().map(|s| s.to_string()));
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut line = vec![r.name.clone()];
            match &r.outcome {
                Ok(agg) => line.extend(agg.cells()),
                Err(msg) => line.push(msg.clone()),
            }
            line
        })
        .collect();
    let n_cols = header.len();
    let mut widths = vec![0usize; n_cols];
    for line in std::iter::once(&header).chain(body.iter()) {
        if line.len() == n_cols {
            for (w, cell) in widths.iter_mut().zip(line) {
                *w = (*w).max(cell.chars().count());
            }
        } else {
            widths[0] = widths[0].max(line[0].chars().count());
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    let fmt_line = |line: &[String]| -> String {
        line.iter()
            .enumerate()
            .map(|(i, cell)| {
                let pad = widths.get(i).copied().unwrap_or(0).saturating_sub(cell.chars().count());
                format!("{cell}{}", " ".repeat(pad))
            })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let rule_len = widths.iter().sum::<usize>() + 2 * (n_cols - 1);
    let _ = writeln!(out, "{}", "-".repeat(rule_len));
    let _ = writeln!(out, "{}", fmt_line(&header));
    let _ = writeln!(out, "{}", "-".repeat(rule_len));
    for line in &body {
        let _ = writeln!(out, "{}", fmt_line(line));
    }
    let _ = writeln!(out, "{}", "-".repeat(rule_len));
    out
}

/// Comma-separated version of the same table. Failed rows carry their
/// message in the first score column and leave the rest empty.
pub fn render_csv_table(rows: &[TableRow]) -> String {
    let mut out = String::from("Algorithm");
    for n in MetricsReport::NAMES {
        let _ = write!(out, ",{n}");
    }
    out.push('\n');
    for r in rows {
        out.push_str(&csv_field(&r.name));
        match &r.outcome {
            Ok(agg) => {
                for c in agg.cells() {
                    let _ = write!(out, ",{c}");
                }
            }
            Err(msg) => {
                let _ = write!(out, ",{},,,,", csv_field(msg));
            }
        }
        out.push('\n');
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
