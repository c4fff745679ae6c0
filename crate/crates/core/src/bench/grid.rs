//! Exhaustive hyperparameter grid search scored by cross-validated accuracy.

use rayon::prelude::*;

use super::models::{fit_model, Family, ModelKind, ModelSpec};
use super::BenchError;
use crate::dataset::{stratified_kfold, FoldAssignment};
use crate::matrix::Matrix;
use crate::rng::derive_seed;

/// A model kind and named axes, each a finite list of values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridSpec {
    pub kind: ModelKind,
    pub axes: Vec<(String, Vec<String>)>,
}

impl GridSpec {
    /// Parses a grid file: one `name = v1, v2, ...` axis per line, `#`
    /// comments and blank lines ignored. A `model = <kind>` line sets the
    /// kind; `kind` (e.g. from a command-line flag) wins when given.
    pub fn parse(text: &str, kind: Option<ModelKind>) -> Result<Self, BenchError> {
        let mut file_kind = None;
        let mut axes: Vec<(String, Vec<String>)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (name, values) = line.split_once('=').ok_or_else(|| BenchError::GridSyntax { line: i + 1 })?;
            let name = name.trim();
            if name == "model" {
                file_kind = Some(values.trim().parse::<ModelKind>()?);
                continue;
            }
            if name.is_empty() || axes.iter().any(|(n, _)| n == name) {
                return Err(BenchError::GridSyntax { line: i + 1 });
            }
            let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
            axes.push((name.to_string(), values));
        }
        let kind = kind.or(file_kind).ok_or(BenchError::GridSyntax { line: 0 })?;
        Ok(GridSpec { kind, axes })
    }

    /// Number of grid points (product of axis sizes).
    pub fn size(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product()
    }

    /// All grid points in lexicographic order of their value indices: the
    /// last axis varies fastest, and the first listed value of every axis
    /// comes first.
    pub fn combinations(&self) -> Vec<ModelSpec> {
        let mut out = vec![ModelSpec::new(self.kind)];
        for (name, values) in &self.axes {
            out = out.into_iter().flat_map(|s| values.iter().map(move |v| s.clone().with(name, v))).collect();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub spec: ModelSpec,
    pub fold_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub best: ModelSpec,
    pub table: Vec<GridRow>,
}

/// Cross-validated accuracy of `spec` over `folds`; fold `f` trains with
/// seed `derive_seed(seed, f)`.
pub fn fold_accuracies(
    spec: &ModelSpec,
    x: &Matrix,
    labels: &[usize],
    n_classes: usize,
    folds: &FoldAssignment,
    seed: u64,
) -> Result<Vec<f64>, BenchError> {
    (0..folds.k)
        .into_par_iter()
        .map(|f| {
            let (train, test) = folds.split(f);
            let y: Vec<usize> = train.iter().map(|&r| labels[r]).collect();
            let model = fit_model(spec, &x.select_rows(&train), &y, n_classes, derive_seed(seed, f as u64))?;
            let hits = test.iter().map(|&r| model.predict(x.row(r)).map(|p| p == labels[r])).collect::<Result<Vec<_>, _>>()?;
            Ok(hits.iter().filter(|&&h| h).count() as f64 / test.len().max(1) as f64)
        })
        .collect()
}

/// Evaluates every grid point with stratified k-fold CV on the given
/// (training) data and returns the one with the highest mean accuracy;
/// ties go to the earliest point in [`GridSpec::combinations`] order.
pub fn grid_search(
    x: &Matrix,
    labels: &[usize],
    n_classes: usize,
    grid: &GridSpec,
    k: usize,
    seed: u64,
) -> Result<GridResult, BenchError> {
    if grid.axes.is_empty() || grid.size() == 0 {
        return Err(BenchError::EmptyGrid);
    }
    if grid.kind.family() != Family::Classical {
        return Err(BenchError::NotClassical(grid.kind.name()));
    }
    let combos = grid.combinations();
    for c in &combos {
        c.validate()?;
    }
    log::info!("grid search over {} points x {k} folds for {}", combos.len(), grid.kind);
    let folds = stratified_kfold(labels, k, seed)?;
    let mut table = Vec::with_capacity(combos.len());
    for spec in combos {
        let fold_accuracy = fold_accuracies(&spec, x, labels, n_classes, &folds, seed)?;
        let mean_accuracy = fold_accuracy.iter().sum::<f64>() / fold_accuracy.len() as f64;
        table.push(GridRow { spec, fold_accuracy, mean_accuracy });
    }
    let mut best = 0;
    for (i, row) in table.iter().enumerate() {
        if row.mean_accuracy > table[best].mean_accuracy {
            best = i;
        }
    }
    Ok(GridResult { best: table[best].spec.clone(), table })
}
