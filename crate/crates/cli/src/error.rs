use std::fmt;

use gwml::bench::BenchError;
use gwml::dataset::DatasetError;
use gwml::stream::{StreamError, WorkerError};

/// A failed command. Rendered as one line `error[<kind>]: <message>`.
#[derive(Debug)]
pub enum CliError {
    /// Bad invocation; exit code 2.
    Usage(String),
    /// The command ran and failed; exit code 1.
    Op { kind: &'static str, message: String },
}

impl CliError {
    pub fn op(kind: &'static str, message: impl fmt::Display) -> Self {
        CliError::Op { kind, message: message.to_string() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Op { .. } => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, message) = match self {
            CliError::Usage(m) => ("usage", m.as_str()),
            CliError::Op { kind, message } => (*kind, message.as_str()),
        };
        write!(f, "error[{kind}]: {}", message.replace(['\n', '\r'], " "))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::op("io", e)
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::op("dataset", e)
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::EmptyModelList
            | BenchError::UnknownModel(_)
            | BenchError::UnknownParam { .. }
            | BenchError::BadParam { .. }
            | BenchError::GridSyntax { .. }
            | BenchError::EmptyGrid => CliError::Usage(e.to_string()),
            BenchError::Io(e) => CliError::op("io", e),
            e => CliError::op("model", e),
        }
    }
}

impl From<StreamError> for CliError {
    fn from(e: StreamError) -> Self {
        match e {
            StreamError::Config(m) => CliError::Usage(m),
            e => CliError::op("stream", e),
        }
    }
}

impl From<WorkerError> for CliError {
    fn from(e: WorkerError) -> Self {
        CliError::op("worker", e)
    }
}
