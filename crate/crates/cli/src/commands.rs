use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use gwml::bench::{
    fit_model, grid_search, load_model, parse_model_list, read_manifest, render_report, run_benchmark,
    save_model, write_report, GridSpec, ModelKind, ModelSpec, TrainedModel, MANIFEST,
};
use gwml::dataset::{
    encode, parse_csv, parse_unlabeled_csv, ClassHistogram, FeatureConfig, FeatureMatrix, GlitchFeatures, GlitchRecord,
    CLASS_TABLE, N_CLASSES, O1_TOTAL,
};
use gwml::stream::{run_worker, Master, MasterConfig, Mode, Outcome, WorkerConfig};

use crate::args::{EvaluateArgs, GridArgs, MasterArgs, PredictArgs, ReportArgs, TrainArgs, ValidateArgs, WorkerArgs};
use crate::error::CliError;

type CliResult = Result<(), CliError>;

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::op("io", format!("{}: {e}", path.display())))
}

fn load_records(path: &Path) -> Result<Vec<GlitchRecord>, CliError> {
    let parsed = parse_csv(open(path)?)?;
    for e in &parsed.errors {
        log::warn!("{}: skipped {e}", path.display());
    }
    for w in &parsed.warnings {
        log::warn!("{}: {w}", path.display());
    }
    if parsed.records.is_empty() {
        return Err(CliError::op("dataset", format!("{}: no valid rows", path.display())));
    }
    Ok(parsed.records)
}

/// Raw (unscaled) design matrix; models that need scaling fit their own
/// scaler on their training rows.
fn load_matrix(path: &Path, preset: &str) -> Result<(FeatureMatrix, FeatureConfig), CliError> {
    let cfg = FeatureConfig::preset(preset).map_err(|e| CliError::Usage(e.to_string()))?;
    let records = load_records(path)?;
    Ok((encode(&records, &cfg, None)?, cfg))
}

fn load_features(path: &Path) -> Result<Vec<GlitchFeatures>, CliError> {
    let parsed = parse_unlabeled_csv(open(path)?)?;
    for e in &parsed.errors {
        log::warn!("{}: skipped {e}", path.display());
    }
    Ok(parsed.records)
}

fn load_artifact(path: &Path) -> Result<TrainedModel, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::op("io", format!("{}: {e}", path.display())))?;
    Ok(load_model(&bytes)?)
}

fn feature_config(model: &TrainedModel) -> Result<&FeatureConfig, CliError> {
    model.meta.features.as_ref().ok_or_else(|| CliError::op("model", "artifact does not record its feature columns"))
}

fn class_name(model: &TrainedModel, class: usize) -> String {
    model.meta.class_names.get(class).cloned().unwrap_or_else(|| class.to_string())
}

pub fn validate(a: ValidateArgs) -> CliResult {
    let parsed = parse_csv(open(&a.data)?)?;
    let hist = ClassHistogram::from_labels(parsed.records.iter().map(|r| r.label.index()));
    let mut out = io::stdout().lock();
    writeln!(out, "{:<28} {:>8} {:>8}  status", "class", "observed", "expected")?;
    for (i, c) in CLASS_TABLE.iter().enumerate() {
        let status = if hist.counts[i] == c.expected_count { "ok" } else { "MISMATCH" };
        writeln!(out, "{:<28} {:>8} {:>8}  {status}", c.name, hist.counts[i], c.expected_count)?;
    }
    let status = if hist.total == O1_TOTAL { "ok" } else { "MISMATCH" };
    writeln!(out, "{:<28} {:>8} {:>8}  {status}", "total", hist.total, O1_TOTAL)?;
    writeln!(out, "rows: {} accepted, {} rejected, {} warnings", parsed.records.len(), parsed.errors.len(), parsed.warnings.len())?;
    for e in parsed.errors.iter().take(a.max_errors) {
        writeln!(out, "rejected: {e}")?;
    }
    for w in parsed.warnings.iter().take(a.max_errors) {
        writeln!(out, "warning: {w}")?;
    }
    let n_classes = hist.counts.iter().filter(|&&c| c > 0).count();
    let verdict = if hist.matches_reference() { "matches reference" } else { "deviates from reference" };
    writeln!(out, "classes present: {n_classes} of {N_CLASSES}; {verdict}")?;
    Ok(())
}

pub fn train(a: TrainArgs) -> CliResult {
    let spec: ModelSpec = a.model.parse()?;
    let (fm, cfg) = load_matrix(&a.data, &a.features.features)?;
    let mut model = fit_model(&spec, &fm.x, &fm.labels, N_CLASSES, a.seed.seed)?;
    model.meta.features = Some(cfg);
    model.meta.class_names = CLASS_TABLE.iter().map(|c| c.name.to_string()).collect();
    let bytes = save_model(&model)?;
    std::fs::write(&a.out, &bytes).map_err(|e| CliError::op("io", format!("{}: {e}", a.out.display())))?;
    println!("trained {spec} on {} rows x {} features (seed {})", fm.rows(), fm.cols(), a.seed.seed);
    println!("wrote {} ({} bytes)", a.out.display(), bytes.len());
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> CliResult {
    let specs = parse_model_list(&a.models)?;
    if a.k < 2 {
        return Err(CliError::Usage(format!("--k must be at least 2, got {}", a.k)));
    }
    let (fm, _) = load_matrix(&a.data, &a.features.features)?;
    let run = run_benchmark(&fm.x, &fm.labels, N_CLASSES, &fm.feature_names, &specs, a.k, a.seed.seed)?;
    print!("{}", render_report(&run));
    if let Some(dir) = &a.report {
        write_report(&run, dir)?;
        println!("report written to {}", dir.display());
    }
    Ok(())
}

pub fn gridsearch(a: GridArgs) -> CliResult {
    let kind: ModelKind = a.model.parse()?;
    let text = std::fs::read_to_string(&a.grid).map_err(|e| CliError::op("io", format!("{}: {e}", a.grid.display())))?;
    let grid = GridSpec::parse(&text, Some(kind))?;
    let (fm, _) = load_matrix(&a.data, &a.features.features)?;
    let result = grid_search(&fm.x, &fm.labels, N_CLASSES, &grid, a.k, a.seed.seed)?;
    let mut out = io::stdout().lock();
    writeln!(out, "{:<60} mean_accuracy", "spec")?;
    for row in &result.table {
        writeln!(out, "{:<60} {:.4}", row.spec.to_string(), row.mean_accuracy)?;
    }
    writeln!(out, "best: {}", result.best)?;
    Ok(())
}

pub fn predict(a: PredictArgs) -> CliResult {
    let model = load_artifact(&a.model)?;
    let cfg = feature_config(&model)?;
    let rows = load_features(&a.input)?;
    let mut out = io::stdout().lock();
    write!(out, "id,label")?;
    if a.proba {
        for c in 0..model.meta.n_classes {
            write!(out, ",p_{}", class_name(&model, c))?;
        }
    }
    writeln!(out)?;
    for f in &rows {
        let row = cfg.encode_row(f);
        let probs = model.predict_proba(&row)?;
        let class = model.predict(&row)?;
        write!(out, "{},{}", f.id, class_name(&model, class))?;
        if a.proba {
            for p in probs {
                write!(out, ",{p}")?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn serve_master(a: MasterArgs) -> CliResult {
    let path = a.model.ok_or_else(|| CliError::Usage("serve-master needs --model".into()))?;
    let model = load_artifact(&path)?;
    let mode = match a.mode.as_deref() {
        Some(m) => Mode::parse(m)?,
        None if model.meta.kind == ModelKind::DeepWaves => Mode::Deep,
        None => Mode::Shallow,
    };
    let d = MasterConfig::default();
    let cfg = MasterConfig {
        listen: a.listen.unwrap_or(d.listen),
        mode,
        model: Some(path),
        timeout: a.timeout_ms.map_or(d.timeout, Duration::from_millis),
        window: a.window.unwrap_or(d.window),
        accept_timeout: a.accept_timeout_ms.map_or(d.accept_timeout, Duration::from_millis),
    };
    let features = feature_config(&model)?.clone();
    let rows = load_features(&a.input)?;
    let master = Master::bind(cfg)?;
    log::info!("listening on {}", master.local_addr()?);
    let mut out = io::stdout().lock();
    let mut failed = None;
    let mut sink = |o: &Outcome| {
        let id = &rows[o.seq() as usize].id;
        let line = match o {
            Outcome::Result { seq, class, degraded } => {
                format!("RESULT seq={seq} id={id} label={} degraded={}", class_name(&model, *class), u8::from(*degraded))
            }
            Outcome::Error { seq, code, message } => format!("ERROR seq={seq} id={id} code={code} message={message}"),
        };
        if let Err(e) = writeln!(out, "{line}") {
            failed.get_or_insert(e);
        }
    };
    let summary = master.run(&model, rows.iter().map(|f| features.encode_row(f)), &mut sink)?;
    if let Some(e) = failed {
        return Err(e.into());
    }
    eprintln!("summary: {summary}");
    Ok(())
}

pub fn serve_worker(a: WorkerArgs) -> CliResult {
    let role = Mode::parse(a.role.as_deref().unwrap_or("shallow"))?.role();
    let slot = a.slot.ok_or_else(|| CliError::Usage("serve-worker needs --slot".into()))?;
    let mut cfg = WorkerConfig::new(a.connect.unwrap_or_else(|| MasterConfig::default().listen), role, slot);
    if let Some(id) = a.worker_id {
        cfg.worker_id = id;
    }
    if let Some(ms) = a.connect_timeout_ms {
        cfg.connect_timeout = Duration::from_millis(ms);
    }
    let stats = run_worker(&cfg)?;
    eprintln!("worker {} served {} records ({} errors)", cfg.worker_id, stats.records, stats.errors);
    Ok(())
}

pub fn report(a: ReportArgs) -> CliResult {
    let manifest: PathBuf = if a.run.is_dir() { a.run.join(MANIFEST) } else { a.run.clone() };
    let run = read_manifest(&manifest)?;
    print!("{}", render_report(&run));
    if let Some(dir) = &a.out {
        write_report(&run, dir)?;
    }
    Ok(())
}
