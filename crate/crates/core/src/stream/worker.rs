//! A worker hosts one ensemble member (or branch) and answers RECORDs.

use std::io::{BufReader, BufWriter};
use std::net::TcpStream;
use std::thread;
use std::time::{Duration, Instant};

use super::config::WorkerConfig;
use super::frame::{code, read_message, write_message, Message, ReadError, Role, PROTOCOL_VERSION};
use super::WorkerError;
use crate::bench::{load_model, ModelBody, ModelKind, TrainedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WorkerStats {
    pub records: u64,
    pub errors: u64,
}

fn connect(cfg: &WorkerConfig) -> Result<TcpStream, WorkerError> {
    let deadline = Instant::now() + cfg.connect_timeout;
    loop {
        match TcpStream::connect(&cfg.connect) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() >= deadline => return Err(WorkerError::ConnectionLost(format!("connect {}: {e}", cfg.connect))),
            Err(_) => thread::sleep(Duration::from_millis(50)),
        }
    }
}

/// Checks that an assigned artifact fits this worker's role and slot.
pub fn check_assignment(model: &TrainedModel, role: Role, slot: u8) -> Result<(), String> {
    let kind_ok = match role {
        Role::Shallow => {
            matches!(model.meta.kind, ModelKind::RfCart | ModelKind::ErtCart | ModelKind::XgbGbtree)
                && matches!(model.body, ModelBody::Forest(_) | ModelBody::Boosted(_))
        }
        Role::Deep => matches!(model.body, ModelBody::DeepBranch { .. }),
    };
    if !kind_ok {
        return Err(format!("artifact kind `{}` cannot serve role {role:?}", model.meta.kind));
    }
    match model.meta.slot {
        Some(s) if s != usize::from(slot) => Err(format!("artifact is for slot {s}, worker has slot {slot}")),
        _ => Ok(()),
    }
}

fn reply(model: &TrainedModel, role: Role, seq: u64, features: &[f64]) -> Message {
    let n = model.meta.n_features;
    if features.len() != n {
        return Message::Error {
            code: code::FEATURE_WIDTH,
            message: format!("seq={seq}: expected {n} features, found {}", features.len()),
        };
    }
    let result = match role {
        Role::Shallow => model.predict_proba(features).map(|probs| {
            let class = crate::argmax(&probs) as u16;
            Message::Vote { seq, class, probs }
        }),
        Role::Deep => model.branch_embed(features).map(|embedding| Message::Embed { seq, embedding }),
    };
    result.unwrap_or_else(|e| Message::Error { code: code::BAD_VALUE, message: format!("seq={seq}: {e}") })
}

/// Connects, announces itself, loads the assigned artifact and serves
/// records until SHUTDOWN. Malformed input is answered with ERROR and
/// skipped; the connection stays up.
pub fn run_worker(cfg: &WorkerConfig) -> Result<WorkerStats, WorkerError> {
    let stream = connect(cfg)?;
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let lost = |e: ReadError| WorkerError::ConnectionLost(e.to_string());
    write_message(&mut writer, &Message::Hello { version: PROTOCOL_VERSION, worker_id: cfg.worker_id, role: cfg.role, slot: cfg.slot })?;

    let model = loop {
        match read_message(&mut reader) {
            Ok(Message::Assign { artifact }) => break artifact,
            Ok(Message::Heartbeat) => {}
            Ok(Message::Shutdown) => return Ok(WorkerStats::default()),
            Ok(Message::Error { message, .. }) => return Err(WorkerError::Refused(message)),
            Ok(other) => {
                let message = format!("expected ASSIGN, got type 0x{:02x}", other.type_byte());
                write_message(&mut writer, &Message::Error { code: code::PROTOCOL, message })?;
            }
            Err(ReadError::Skipped(e)) => {
                write_message(&mut writer, &Message::Error { code: code::MALFORMED_FRAME, message: e.to_string() })?;
            }
            Err(e) => return Err(lost(e)),
        }
    };
    let model = match load_model(&model).map_err(|e| e.to_string()).and_then(|m| check_assignment(&m, cfg.role, cfg.slot).map(|_| m)) {
        Ok(m) => m,
        Err(why) => {
            let _ = write_message(&mut writer, &Message::Error { code: code::ASSIGN_REJECTED, message: why.clone() });
            return Err(WorkerError::AssignRejected(why));
        }
    };
    log::info!("worker {} loaded {} for slot {}", cfg.worker_id, model.meta.kind, cfg.slot);
    write_message(&mut writer, &Message::Heartbeat)?;

    let mut stats = WorkerStats::default();
    loop {
        let out = match read_message(&mut reader) {
            Ok(Message::Record { seq, features }) => {
                stats.records += 1;
                reply(&model, cfg.role, seq, &features)
            }
            Ok(Message::Shutdown) => return Ok(stats),
            Ok(Message::Heartbeat) => continue,
            Ok(other) => Message::Error { code: code::PROTOCOL, message: format!("unexpected message type 0x{:02x}", other.type_byte()) },
            Err(ReadError::Skipped(e)) => {
                let c = if matches!(e, super::FrameError::UnknownType(_)) { code::UNKNOWN_TYPE } else { code::MALFORMED_FRAME };
                Message::Error { code: c, message: e.to_string() }
            }
            Err(ReadError::Fatal(e)) => {
                let _ = write_message(&mut writer, &Message::Error { code: code::MALFORMED_FRAME, message: e.to_string() });
                return Err(WorkerError::ConnectionLost(format!("stream corrupt: {e}")));
            }
            Err(e) => return Err(lost(e)),
        };
        if matches!(out, Message::Error { .. }) {
            stats.errors += 1;
        }
        write_message(&mut writer, &out)?;
    }
}
