//! Model registry, `.gwml` artifacts, grid search and cross-validated
//! benchmark reports.

mod artifact;
mod grid;
mod models;
mod run;

pub use artifact::{describe, load_model, peek_kind, save_model, EXTENSION, FORMAT_VERSION, MAGIC};
pub use grid::{fold_accuracies, grid_search, GridResult, GridRow, GridSpec};
pub use models::{fit_model, parse_model_list, training_digest, Family, HyperParams, ModelBody, ModelKind, ModelMeta, ModelSpec, TrainedModel};
pub use run::{
    fit_fold, read_manifest, render_csv, render_report, run_benchmark, write_report, BenchEntry, BenchmarkRun,
    DBN_NOTE, MANIFEST, REPORT_CSV, REPORT_TXT,
};

use thiserror::Error;

use crate::baselines::BaselineError;
use crate::dataset::DatasetError;
use crate::ensemble::EnsembleError;
use crate::forests::ForestError;
use crate::metrics::MetricsError;
use crate::nnet::NnError;
use crate::trees::TreeError;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown model kind `{0}`")]
    UnknownModel(String),
    #[error("model `{kind}` has no hyperparameter `{key}`")]
    UnknownParam { kind: &'static str, key: String },
    #[error("bad value `{value}` for `{key}`: {reason}")]
    BadParam { key: String, value: String, reason: &'static str },
    #[error("{0}: not implemented (out of scope)")]
    NotImplemented(&'static str),
    #[error("`{0}` artifacts are derived from a trained model, not fitted directly")]
    NotTrainable(&'static str),
    #[error("grid search supports classical models only, not `{0}`")]
    NotClassical(&'static str),
    #[error("grid has no points")]
    EmptyGrid,
    #[error("grid file syntax error on line {line}")]
    GridSyntax { line: usize },
    #[error("no models to benchmark")]
    EmptyModelList,
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("matrix has {rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("label {label} outside 0..{n_classes}")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("row has {found} features, model expects {expected}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("input contains non-finite value {0}")]
    NonFiniteInput(f64),
    #[error("expected a `{expected}` model, found `{found}`")]
    KindMismatch { expected: &'static str, found: &'static str },
    #[error("no ensemble slot {0}")]
    BadSlot(usize),
    #[error("not a model artifact (bad magic)")]
    BadMagic,
    #[error("unsupported artifact format version {0}")]
    UnsupportedVersion(u16),
    #[error("corrupt artifact section `{0}`")]
    CorruptSection(String),
    #[error("artifact section `{0}` exceeds 4 GiB")]
    TooLarge(String),
    #[error("report error: {0}")]
    Report(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
