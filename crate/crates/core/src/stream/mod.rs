//! Master/worker streaming inference over TCP.
//!
//! The master broadcasts every record to all workers; each worker hosts one
//! ShallowWaves member (answering with its vote) or one DeepWaves branch
//! (answering with its embedding). The master combines the replies and
//! emits results in record order.

mod config;
mod frame;
mod master;
mod worker;

pub use config::{parse_kv, MasterConfig, Mode, WorkerConfig};
pub use frame::{
    code, decode_body, decode_frame, frame_extent, kind, read_message, write_message, FrameDecoder, FrameError, Message,
    ReadError, Role, MAX_FRAME_LEN, PROTOCOL_VERSION,
};
pub use master::{error_seq, Master, Outcome, Summary};
pub use worker::{check_assignment, run_worker, WorkerStats};

use thiserror::Error;

use crate::bench::BenchError;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("roster incomplete: {connected} of {expected} workers joined")]
    RosterIncomplete { expected: usize, connected: usize },
    #[error("worker in slot {slot} rejected its assignment: {message}")]
    WorkerRejected { slot: usize, message: String },
    #[error("duplicate reply from slot {slot} for seq {seq}")]
    DuplicateReply { slot: usize, seq: u64 },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("expected a `{expected}` model, found `{found}`")]
    WrongModel { expected: &'static str, found: &'static str },
    #[error(transparent)]
    Model(#[from] BenchError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum WorkerError {
    #[error("assignment rejected: {0}")]
    AssignRejected(String),
    #[error("master refused this worker: {0}")]
    Refused(String),
    #[error("connection lost: {0}")]
    ConnectionLost(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
