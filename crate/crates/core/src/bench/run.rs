//! Cross-validated benchmark runs and their reports.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::models::{fit_model, Family, HyperParams, ModelKind, ModelSpec, TrainedModel};
use super::BenchError;
use crate::dataset::{stratified_kfold, FoldAssignment, Feature};
use crate::matrix::Matrix;
use crate::metrics::{self, render_text_table, AggregateReport, MetricsReport, TableRow};
use crate::rng::derive_seed;

/// Message shown in the DBN row.
pub const DBN_NOTE: &str = "not implemented (out of scope)";

/// One benchmarked model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub name: String,
    pub spec: String,
    pub kind: ModelKind,
    pub family: Family,
    /// Resolved hyperparameters.
    pub params: HyperParams,
    /// True when every hyperparameter is a built-in default.
    pub defaults: bool,
    pub outcome: Result<AggregateReport, String>,
    pub folds: Vec<MetricsReport>,
    /// Fit + predict time summed over folds.
    pub wall_seconds: f64,
}

/// A complete benchmark: run metadata plus one entry per requested model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRun {
    pub dataset_digest: String,
    pub n_rows: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub feature_names: Vec<String>,
    pub k: usize,
    pub seed: u64,
    pub entries: Vec<BenchEntry>,
}

/// Fits `spec` on the training rows of `fold`; test rows are never read.
pub fn fit_fold(
    spec: &ModelSpec,
    x: &Matrix,
    labels: &[usize],
    n_classes: usize,
    folds: &FoldAssignment,
    fold: usize,
    seed: u64,
) -> Result<TrainedModel, BenchError> {
    let (train, _) = folds.split(fold);
    let y: Vec<usize> = train.iter().map(|&r| labels[r]).collect();
    fit_model(spec, &x.select_rows(&train), &y, n_classes, derive_seed(seed, fold as u64))
}

fn run_fold(
    spec: &ModelSpec,
    x: &Matrix,
    labels: &[usize],
    n_classes: usize,
    folds: &FoldAssignment,
    fold: usize,
    seed: u64,
) -> (Result<MetricsReport, BenchError>, f64) {
    let start = Instant::now();
    let result = (|| {
        let model = fit_fold(spec, x, labels, n_classes, folds, fold, seed)?;
        let (_, test) = folds.split(fold);
        let truth: Vec<usize> = test.iter().map(|&r| labels[r]).collect();
        let pred = test.iter().map(|&r| model.predict(x.row(r))).collect::<Result<Vec<_>, _>>()?;
        Ok(metrics::evaluate(&truth, &pred, n_classes)?)
    })();
    (result, start.elapsed().as_secs_f64())
}

/// Runs stratified k-fold CV for every spec. A failing model is recorded in
/// its entry; it does not abort the run. (model × fold) tasks run in
/// parallel and are collected by key, so results do not depend on timing.
pub fn run_benchmark(
    x: &Matrix,
    labels: &[usize],
    n_classes: usize,
    feature_names: &[String],
    specs: &[ModelSpec],
    k: usize,
    seed: u64,
) -> Result<BenchmarkRun, BenchError> {
    if specs.is_empty() {
        return Err(BenchError::EmptyModelList);
    }
    let folds = stratified_kfold(labels, k, seed)?;
    let tasks: Vec<(usize, usize)> = (0..specs.len())
        .filter(|&m| specs[m].kind.is_trainable())
        .flat_map(|m| (0..k).map(move |f| (m, f)))
        .collect();
    let results: Vec<((usize, usize), (Result<MetricsReport, BenchError>, f64))> = tasks
        .par_iter()
        .map(|&(m, f)| ((m, f), run_fold(&specs[m], x, labels, n_classes, &folds, f, seed)))
        .collect();
    let entries = specs
        .iter()
        .enumerate()
        .map(|(m, spec)| {
            let mut reports = Vec::new();
            let mut wall = 0.0;
            let mut failure = None;
            for ((_, _), (r, secs)) in results.iter().filter(|((mm, _), _)| *mm == m) {
                wall += secs;
                match r {
                    Ok(rep) => reports.push(*rep),
                    Err(e) if failure.is_none() => failure = Some(e.to_string()),
                    Err(_) => {}
                }
            }
            let outcome = match (spec.kind, failure) {
                (ModelKind::Dbn, _) => Err(DBN_NOTE.to_string()),
                (_, Some(msg)) => Err(format!("failed: {msg}")),
                (_, None) => metrics::aggregate(&reports).map_err(|e| format!("failed: {e}")),
            };
            if let Err(msg) = &outcome {
                log::warn!("{}: {msg}", spec.kind);
            }
            BenchEntry {
                name: spec.kind.display().to_string(),
                spec: spec.to_string(),
                kind: spec.kind,
                family: spec.kind.family(),
                params: spec.resolved(),
                defaults: spec.is_default(),
                outcome,
                folds: reports,
                wall_seconds: wall,
            }
        })
        .collect();
    Ok(BenchmarkRun {
        dataset_digest: super::models::training_digest(x, labels),
        n_rows: x.rows(),
        n_features: x.cols(),
        n_classes,
        feature_names: feature_names.to_vec(),
        k,
        seed,
        entries,
    })
}

fn rows_for(run: &BenchmarkRun, family: Family) -> Vec<TableRow> {
    let mut rows: Vec<TableRow> = run
        .entries
        .iter()
        .filter(|e| e.family == family)
        .map(|e| TableRow { name: e.name.clone(), outcome: e.outcome.clone() })
        .collect();
    if family == Family::Deep && !rows.is_empty() && !run.entries.iter().any(|e| e.kind == ModelKind::Dbn) {
        rows.push(TableRow { name: ModelKind::Dbn.display().to_string(), outcome: Err(DBN_NOTE.to_string()) });
    }
    rows
}

/// Successful entries ranked by mean accuracy (stable for ties), at most ten.
fn best_rows(run: &BenchmarkRun) -> Vec<TableRow> {
    let mut ok: Vec<&BenchEntry> = run.entries.iter().filter(|e| e.outcome.is_ok()).collect();
    let acc = |e: &BenchEntry| e.outcome.as_ref().map(|a| a.mean.accuracy).unwrap_or(f64::NEG_INFINITY);
    ok.sort_by(|a, b| acc(b).total_cmp(&acc(a)));
    ok.into_iter().take(10).map(|e| TableRow { name: e.name.clone(), outcome: e.outcome.clone() }).collect()
}

/// Plain-text report: classical, deep and best-model tables followed by
/// run metadata and the hyperparameters each row used.
pub fn render_report(run: &BenchmarkRun) -> String {
    let mut out = String::new();
    for (title, family) in [
        ("Classical Machine Learning models - anomaly detection results", Family::Classical),
        ("Deep Learning models - anomaly detection results", Family::Deep),
    ] {
        let rows = rows_for(run, family);
        if !rows.is_empty() {
            out.push_str(&render_text_table(title, &rows));
            out.push('\n');
        }
    }
    let best = best_rows(run);
    if !best.is_empty() {
        out.push_str(&render_text_table("Best classification models - anomaly detection results", &best));
        out.push('\n');
    }
    let _ = writeln!(out, "Run");
    let _ = writeln!(out, "  k = {}", run.k);
    let _ = writeln!(out, "  seed = {}", run.seed);
    let _ = writeln!(out, "  rows = {}, features = {}, classes = {}", run.n_rows, run.n_features, run.n_classes);
    let _ = writeln!(out, "  features: {}", run.feature_names.join(", "));
    let _ = writeln!(out, "  dataset sha256 = {}", run.dataset_digest);
    let _ = writeln!(out, "  cells are mean±sample std over the {} folds", run.k);
    let _ = writeln!(out, "\nHyperparameters");
    for e in &run.entries {
        let params: Vec<String> = e.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let tag = if e.defaults { " [defaults]" } else { "" };
        let _ = writeln!(out, "  {}: {}{tag} ({:.1}s)", e.name, params.join(" "), e.wall_seconds);
    }
    if run.feature_names.iter().any(|f| f == Feature::GpsTime.column()) {
        let _ = writeln!(
            out,
            "\nNote: {} is used as a feature; with randomly assigned folds, glitches close in time can fall on \
             both sides of a split, which may inflate scores.",
            Feature::GpsTime.column()
        );
    }
    out
}

/// One CSV line per table row: table, algorithm, the five cells, seconds.
pub fn render_csv(run: &BenchmarkRun) -> Result<String, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["Table", "Algorithm"];
    header.extend(MetricsReport::NAMES);
    header.extend(["Seconds", "Params"]);
    w.write_record(&header).map_err(|e| BenchError::Report(e.to_string()))?;
    for e in &run.entries {
        let table = match e.family {
            Family::Classical => "classical",
            Family::Deep => "deep",
        };
        let mut rec = vec![table.to_string(), e.name.clone()];
        match &e.outcome {
            Ok(agg) => rec.extend(agg.cells()),
            Err(msg) => {
                rec.push(msg.clone());
                rec.extend(std::iter::repeat_n(String::new(), 4));
            }
        }
        rec.push(format!("{:.3}", e.wall_seconds));
        rec.push(e.params.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" "));
        w.write_record(&rec).map_err(|e| BenchError::Report(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Report(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| BenchError::Report(e.to_string()))
}

pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_CSV: &str = "report.csv";
pub const MANIFEST: &str = "manifest.json";

/// Writes `report.txt`, `report.csv` and the JSON run manifest into `dir`.
pub fn write_report(run: &BenchmarkRun, dir: &Path) -> Result<(), BenchError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(REPORT_TXT), render_report(run))?;
    std::fs::write(dir.join(REPORT_CSV), render_csv(run)?)?;
    let manifest = serde_json::to_string_pretty(run).map_err(|e| BenchError::Report(e.to_string()))?;
    std::fs::write(dir.join(MANIFEST), manifest + "\n")?;
    Ok(())
}

/// Reads a manifest written by [`write_report`].
pub fn read_manifest(path: &Path) -> Result<BenchmarkRun, BenchError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| BenchError::Report(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::o1_reference_labels;
    use crate::synth::blobs;

    #[test]
    fn majority_dummy_on_reference_labels() {
        let y = o1_reference_labels();
        let x = Matrix::zeros(y.len(), 1);
        let run = run_benchmark(&x, &y, 22, &["c".into()], &[ModelSpec::new(ModelKind::Majority)], 10, 7).unwrap();
        let acc = run.entries[0].outcome.as_ref().unwrap().mean.accuracy;
        assert!((acc - 1763.0 / 6667.0).abs() < 0.005, "{acc}");
        assert_eq!(run.k, 10);
        assert_eq!(run.entries[0].folds.len(), 10);
    }

    #[test]
    fn empty_model_list_rejected() {
        let (x, y) = blobs(5, 2, 2, 3.0, 1.0, 0);
        assert!(matches!(run_benchmark(&x, &y, 2, &[], &[], 2, 0), Err(BenchError::EmptyModelList)));
    }

    #[test]
    fn deterministic_and_failures_are_contained() {
        let (x, y) = blobs(12, 3, 2, 4.0, 1.0, 5);
        let specs = vec![
            ModelSpec::new(ModelKind::Cart),
            ModelSpec::new(ModelKind::RfCart).with("n_trees", 5),
            ModelSpec::new(ModelKind::Knn).with("k", 100),
            ModelSpec::new(ModelKind::Perceptron).with("epochs", 2),
            ModelSpec::new(ModelKind::Dbn),
        ];
        let names = vec!["a".to_string(), "b".to_string()];
        let a = run_benchmark(&x, &y, 3, &names, &specs, 3, 11).unwrap();
        let b = run_benchmark(&x, &y, 3, &names, &specs, 3, 11).unwrap();
        for (ea, eb) in a.entries.iter().zip(&b.entries) {
            assert_eq!(ea.outcome, eb.outcome);
            assert_eq!(ea.folds, eb.folds);
        }
        assert!(a.entries[0].outcome.is_ok());
        // k larger than the training fold is allowed by the classifier and
        // simply uses every neighbour.
        assert!(a.entries[2].outcome.is_ok());
        assert_eq!(a.entries[4].outcome, Err(DBN_NOTE.to_string()));
        let text = render_report(&a);
        assert!(text.contains("DBN") && text.contains(DBN_NOTE));
        assert!(text.contains("k = 3"));
        assert!(text.contains("[defaults]"));
        assert!(text.contains('±'));
        let csv = render_csv(&a).unwrap();
        assert_eq!(csv.lines().count(), 1 + specs.len());
    }

    #[test]
    fn dbn_row_added_to_deep_table() {
        let (x, y) = blobs(6, 2, 2, 4.0, 1.0, 5);
        let specs = vec![ModelSpec::new(ModelKind::Perceptron).with("epochs", 1)];
        let run = run_benchmark(&x, &y, 2, &["a".into(), "b".into()], &specs, 2, 0).unwrap();
        assert!(render_report(&run).contains(DBN_NOTE));
    }

    #[test]
    fn report_files_round_trip() {
        let (x, y) = blobs(6, 2, 2, 4.0, 1.0, 5);
        let run =
            run_benchmark(&x, &y, 2, &["GPStime".into(), "snr".into()], &[ModelSpec::new(ModelKind::Gnb)], 2, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_report(&run, dir.path()).unwrap();
        for f in [REPORT_TXT, REPORT_CSV, MANIFEST] {
            assert!(dir.path().join(f).exists());
        }
        assert_eq!(read_manifest(&dir.path().join(MANIFEST)).unwrap(), run);
        assert!(std::fs::read_to_string(dir.path().join(REPORT_TXT)).unwrap().contains("GPStime is used"));
    }

    /// Perturbing held-out rows must not change anything fitted for that fold.
    #[test]
    fn no_test_fold_leakage() {
        let (x, y) = blobs(15, 3, 3, 3.0, 1.0, 9);
        let folds = stratified_kfold(&y, 5, 1).unwrap();
        let (_, test) = folds.split(2);
        let mut mutated = x.clone();
        for &r in &test {
            for v in mutated.row_mut(r) {
                *v = *v * 1e3 + 17.0;
            }
        }
        for spec in [
            ModelSpec::new(ModelKind::Knn),
            ModelSpec::new(ModelKind::LogReg).with("epochs", 20),
            ModelSpec::new(ModelKind::RfC45).with("n_trees", 4),
            ModelSpec::new(ModelKind::Mlp).with("epochs", 1),
        ] {
            let a = fit_fold(&spec, &x, &y, 3, &folds, 2, 4).unwrap();
            let b = fit_fold(&spec, &mutated, &y, 3, &folds, 2, 4).unwrap();
            assert_eq!(a, b, "{spec}");
            assert_eq!(a.scaler.is_some(), spec.kind.standardizes());
        }
    }
}
