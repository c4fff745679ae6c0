use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::error::CliError;

/// Glitch classification pipeline: dataset checks, training, cross-validated
/// benchmarks and master/worker streaming inference.
#[derive(Debug, Parser)]
#[command(name = "gwml", version, args_override_self = true, propagate_version = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a labelled metadata CSV against the reference class counts.
    Validate(ValidateArgs),
    /// Fit one model on a labelled CSV and save it as an artifact.
    Train(TrainArgs),
    /// Stratified k-fold benchmark of several models, with a report directory.
    Evaluate(EvaluateArgs),
    /// Cross-validated grid search over one classical model's hyperparameters.
    Gridsearch(GridArgs),
    /// Predict labels for every row of a CSV with a saved model.
    Predict(PredictArgs),
    /// Stream records through a roster of workers and print ordered results.
    ServeMaster(MasterArgs),
    /// Serve one ensemble member or DeepWaves branch for a master.
    ServeWorker(WorkerArgs),
    /// Re-render the report of a saved benchmark run.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// key=value file whose keys are long flag names; flags given on the
    /// command line take precedence.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Seed {
    /// Seed for every random choice.
    #[arg(long, env = "GWML_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct Features {
    /// Feature preset: `default` (seven columns, no id) or `paper8` (all eight).
    #[arg(long, default_value = "default")]
    pub features: String,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Labelled metadata CSV.
    pub data: PathBuf,
    /// How many rejected rows to list.
    #[arg(long, default_value_t = 10)]
    pub max_errors: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Model spec, e.g. `rf-cart` or `rf-cart(n_trees=50,max_depth=8)`.
    #[arg(long)]
    pub model: String,
    /// Labelled metadata CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Artifact path to write.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub features: Features,
    #[command(flatten)]
    pub seed: Seed,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Labelled metadata CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated model specs; `all`, `classical` and `deep` expand to families.
    #[arg(long)]
    pub models: String,
    /// Number of folds.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Directory for report.txt, report.csv and manifest.json.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub features: Features,
    #[command(flatten)]
    pub seed: Seed,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Model kind to tune (classical kinds only).
    #[arg(long)]
    pub model: String,
    /// Grid file: one `param = v1, v2, ...` line per axis.
    #[arg(long)]
    pub grid: PathBuf,
    /// Labelled metadata CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Number of folds.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[command(flatten)]
    pub features: Features,
    #[command(flatten)]
    pub seed: Seed,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Saved model artifact.
    #[arg(long)]
    pub model: PathBuf,
    /// Metadata CSV; a label column is allowed and ignored.
    #[arg(long)]
    pub input: PathBuf,
    /// Also print the class probabilities.
    #[arg(long)]
    pub proba: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct MasterArgs {
    /// Address to listen on.
    #[arg(long)]
    pub listen: Option<String>,
    /// `shallow` (3 member workers) or `deep` (4 branch workers); inferred
    /// from the model when omitted.
    #[arg(long)]
    pub mode: Option<String>,
    /// Trained shallowwaves or deepwaves artifact.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Reply timeout per record, in milliseconds.
    #[arg(long)]
    pub timeout_ms: Option<u64>,
    /// Maximum records in flight.
    #[arg(long)]
    pub window: Option<usize>,
    /// How long to wait for the full roster, in milliseconds.
    #[arg(long)]
    pub accept_timeout_ms: Option<u64>,
    /// Metadata CSV whose rows are streamed.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct WorkerArgs {
    /// Master address.
    #[arg(long)]
    pub connect: Option<String>,
    /// `shallow` or `deep`.
    #[arg(long)]
    pub role: Option<String>,
    /// Member (0 = RF, 1 = ERT, 2 = XGBoost) or branch index (0..4).
    #[arg(long)]
    pub slot: Option<u8>,
    /// Identifier reported to the master.
    #[arg(long)]
    pub worker_id: Option<u16>,
    /// How long to retry connecting, in milliseconds.
    #[arg(long)]
    pub connect_timeout_ms: Option<u64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report directory or manifest.json of a saved run.
    pub run: PathBuf,
    /// Write report.txt, report.csv and manifest.json here as well.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

/// Splices `--config FILE` entries into the argument list right after the
/// subcommand, so explicitly given flags (which come later) override them.
pub fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let args: Vec<String> = match argv.iter().map(|a| a.clone().into_string()).collect() {
        Ok(a) => a,
        Err(_) => return Ok(argv),
    };
    let path = args.iter().enumerate().find_map(|(i, a)| match a.strip_prefix("--config") {
        Some("") => args.get(i + 1).cloned(),
        Some(rest) => rest.strip_prefix('=').map(str::to_string),
        None => None,
    });
    let (Some(path), Some(sub_pos)) = (path, args.iter().skip(1).position(|a| !a.starts_with('-')).map(|p| p + 1)) else {
        return Ok(argv);
    };
    let cmd = Cli::command();
    let Some(sub) = cmd.find_subcommand(&args[sub_pos]) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::op("io", format!("{path}: {e}")))?;
    let map = gwml::stream::parse_kv(&text).map_err(|e| CliError::Usage(format!("{path}: {e}")))?;
    let mut injected = Vec::new();
    for (key, value) in map {
        let flag = key.replace('_', "-");
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(flag.as_str()) && flag != "config")
            .ok_or_else(|| CliError::Usage(format!("{path}: unknown key `{key}` for {}", sub.get_name())))?;
        if arg.get_action().takes_values() {
            injected.push(format!("--{flag}={value}"));
        } else {
            match value.as_str() {
                "true" => injected.push(format!("--{flag}")),
                "false" => {}
                _ => return Err(CliError::Usage(format!("{path}: `{key}` expects true or false"))),
            }
        }
    }
    let mut out: Vec<OsString> = args[..=sub_pos].iter().map(OsString::from).collect();
    out.extend(injected.into_iter().map(OsString::from));
    out.extend(args[sub_pos + 1..].iter().map(OsString::from));
    Ok(out)
}
