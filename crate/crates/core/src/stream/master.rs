//! The master: broadcasts records, collects per-slot replies and emits one
//! ordered RESULT (or per-record ERROR) for every record.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::config::{MasterConfig, Mode};
use super::frame::{code, read_message, write_message, FrameError, Message, ReadError, PROTOCOL_VERSION};
use super::StreamError;
use crate::bench::{save_model, ModelBody, ModelKind, TrainedModel};
use crate::deepwaves::DeepWavesModel;
use crate::ensemble::{hard_vote, MemberVote};

/// What the master emits for one record.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Result { seq: u64, class: usize, degraded: bool },
    Error { seq: u64, code: u16, message: String },
}

impl Outcome {
    pub fn seq(&self) -> u64 {
        match self {
            Outcome::Result { seq, .. } | Outcome::Error { seq, .. } => *seq,
        }
    }

    /// Wire form: RESULT, or ERROR whose message starts with `seq=<n>:`.
    pub fn to_message(&self) -> Message {
        match self {
            Outcome::Result { seq, class, degraded } => Message::Result { seq: *seq, class: *class as u16, degraded: *degraded },
            Outcome::Error { seq, code, message } => Message::Error { code: *code, message: format!("seq={seq}: {message}") },
        }
    }
}

/// Counts reported after a run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Summary {
    pub results: u64,
    pub degraded: u64,
    pub errors: u64,
    pub mean_latency_ms: f64,
    /// Workers disconnected for protocol violations or I/O failures.
    pub dropped_workers: u64,
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "results={} degraded={} errors={} mean_latency_ms={:.3} dropped_workers={}",
            self.results, self.degraded, self.errors, self.mean_latency_ms, self.dropped_workers
        )
    }
}

/// Extracts `n` from an ERROR message of the form `seq=<n>: ...`.
pub fn error_seq(message: &str) -> Option<u64> {
    message.strip_prefix("seq=")?.split(':').next()?.parse().ok()
}

enum Event {
    Frame(Message),
    Skipped(FrameError),
    Gone(String),
}

enum Reply {
    Vote(MemberVote),
    Embed(Vec<f64>),
    Failed { code: u16, message: String },
}

struct Pending {
    sent: Instant,
    deadline: Instant,
    replies: Vec<Option<Reply>>,
}

struct Link {
    stream: TcpStream,
    tx: Option<Sender<Arc<Vec<u8>>>>,
    reader: Option<JoinHandle<()>>,
    writer: Option<JoinHandle<()>>,
}

impl Link {
    fn alive(&self) -> bool {
        self.tx.is_some()
    }

    fn send(&mut self, bytes: &Arc<Vec<u8>>) {
        if let Some(tx) = &self.tx {
            if tx.send(Arc::clone(bytes)).is_err() {
                self.tx = None;
            }
        }
    }

    fn drop_connection(&mut self) {
        self.tx = None;
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}

/// How the master turns replies into a class.
enum Combiner<'a> {
    Vote { n_classes: usize },
    Head { model: &'a DeepWavesModel, widths: Vec<usize> },
}

pub struct Master {
    listener: TcpListener,
    cfg: MasterConfig,
}

impl Master {
    pub fn bind(cfg: MasterConfig) -> Result<Self, StreamError> {
        cfg.validate()?;
        let listener = TcpListener::bind(&cfg.listen)?;
        Ok(Master { listener, cfg })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, StreamError> {
        Ok(self.listener.local_addr()?)
    }

    /// Per-slot artifacts derived from the ensemble.
    fn slot_artifacts(&self, model: &TrainedModel) -> Result<Vec<Vec<u8>>, StreamError> {
        let n = self.cfg.mode.n_slots();
        (0..n)
            .map(|s| {
                let m = match self.cfg.mode {
                    Mode::Shallow => model.shallow_member(s)?,
                    Mode::Deep => model.deep_branch(s)?,
                };
                Ok(save_model(&m)?)
            })
            .collect()
    }

    /// Accepts HELLOs until every slot is taken, then assigns and waits for
    /// each worker's ready heartbeat.
    fn gather_roster(&self, artifacts: &[Vec<u8>]) -> Result<Vec<TcpStream>, StreamError> {
        let n = artifacts.len();
        let deadline = Instant::now() + self.cfg.accept_timeout;
        let mut slots: Vec<Option<TcpStream>> = (0..n).map(|_| None).collect();
        self.listener.set_nonblocking(true)?;
        while slots.iter().any(Option::is_none) {
            let now = Instant::now();
            if now >= deadline {
                return Err(StreamError::RosterIncomplete { expected: n, connected: slots.iter().flatten().count() });
            }
            let (stream, peer) = match self.listener.accept() {
                Ok(c) => c,
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    thread::sleep(Duration::from_millis(5));
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            stream.set_nonblocking(false)?;
            stream.set_nodelay(true)?;
            stream.set_read_timeout(Some(deadline.saturating_duration_since(now).max(Duration::from_millis(1))))?;
            let hello = read_message(&mut &stream);
            let verdict = match hello {
                Ok(Message::Hello { version, role, slot, worker_id }) => {
                    let slot = usize::from(slot);
                    if version != PROTOCOL_VERSION {
                        Err(format!("protocol version {version} unsupported"))
                    } else if role != self.cfg.mode.role() {
                        Err(format!("role {role:?} does not match {:?} mode", self.cfg.mode))
                    } else if slot >= n {
                        Err(format!("slot {slot} outside 0..{n}"))
                    } else if slots[slot].is_some() {
                        Err(format!("slot {slot} already taken"))
                    } else {
                        log::info!("worker {worker_id} from {peer} joined slot {slot}");
                        Ok(slot)
                    }
                }
                Ok(_) => Err("expected HELLO".to_string()),
                Err(e) => Err(format!("no HELLO: {e}")),
            };
            match verdict {
                Ok(slot) => slots[slot] = Some(stream),
                Err(message) => {
                    log::warn!("rejecting {peer}: {message}");
                    let _ = write_message(&mut &stream, &Message::Error { code: code::ROSTER, message });
                }
            }
        }
        let streams: Vec<TcpStream> = slots.into_iter().flatten().collect();
        for (slot, (stream, artifact)) in streams.iter().zip(artifacts).enumerate() {
            write_message(&mut BufWriter::new(stream), &Message::Assign { artifact: artifact.clone() })?;
            let _ = slot;
        }
        for (slot, stream) in streams.iter().enumerate() {
            stream.set_read_timeout(Some(deadline.saturating_duration_since(Instant::now()).max(Duration::from_millis(1))))?;
            match read_message(&mut &*stream) {
                Ok(Message::Heartbeat) => {}
                Ok(Message::Error { message, .. }) => return Err(StreamError::WorkerRejected { slot, message }),
                Ok(_) => return Err(StreamError::WorkerRejected { slot, message: "expected ready heartbeat".into() }),
                Err(e) => return Err(StreamError::WorkerRejected { slot, message: e.to_string() }),
            }
            stream.set_read_timeout(None)?;
        }
        self.listener.set_nonblocking(false)?;
        Ok(streams)
    }

    /// Serves `records` through the roster. `sink` sees one outcome per
    /// record, in strictly increasing `seq` order starting at 0.
    pub fn run<I>(&self, model: &TrainedModel, records: I, sink: &mut dyn FnMut(&Outcome)) -> Result<Summary, StreamError>
    where
        I: IntoIterator<Item = Vec<f64>>,
    {
        let combiner = match (self.cfg.mode, &model.body) {
            (Mode::Shallow, ModelBody::ShallowWaves(m)) => Combiner::Vote { n_classes: m.n_classes },
            (Mode::Deep, ModelBody::DeepWaves(m)) => Combiner::Head { model: m, widths: m.branch_widths() },
            (mode, _) => {
                let expected = if mode == Mode::Shallow { ModelKind::ShallowWaves } else { ModelKind::DeepWaves };
                return Err(StreamError::WrongModel { expected: expected.name(), found: model.meta.kind.name() });
            }
        };
        let artifacts = self.slot_artifacts(model)?;
        let streams = self.gather_roster(&artifacts)?;
        let (events_tx, events) = mpsc::channel();
        let mut links: Vec<Link> = streams.into_iter().enumerate().map(|(slot, s)| spawn_link(slot, s, &events_tx)).collect::<Result<_, _>>()?;
        drop(events_tx);
        let mut seq_state = Sequencer { cfg: &self.cfg, combiner, pending: BTreeMap::new(), next_seq: 0, summary: Summary::default(), latency_total: 0.0 };
        let result = seq_state.stream(records.into_iter(), &mut links, &events, sink);
        let shutdown = Arc::new(Message::Shutdown.encode());
        for link in &mut links {
            link.send(&shutdown);
            link.tx = None;
        }
        for link in &mut links {
            if let Some(w) = link.writer.take() {
                let _ = w.join();
            }
            let _ = link.stream.shutdown(Shutdown::Both);
            if let Some(r) = link.reader.take() {
                let _ = r.join();
            }
        }
        result?;
        let mut summary = seq_state.summary;
        if summary.results > 0 {
            summary.mean_latency_ms = seq_state.latency_total / summary.results as f64;
        }
        Ok(summary)
    }
}

fn spawn_link(slot: usize, stream: TcpStream, events: &Sender<(usize, Event)>) -> Result<Link, StreamError> {
    let (tx, rx) = mpsc::channel::<Arc<Vec<u8>>>();
    let write_half = stream.try_clone()?;
    let writer = thread::spawn(move || {
        let mut w = BufWriter::new(write_half);
        for bytes in rx {
            if w.write_all(&bytes).and_then(|_| w.flush()).is_err() {
                break;
            }
        }
    });
    let read_half = stream.try_clone()?;
    let events = events.clone();
    let reader = thread::spawn(move || {
        let mut r = BufReader::new(read_half);
        loop {
            let ev = match read_message(&mut r) {
                Ok(m) => Event::Frame(m),
                Err(ReadError::Skipped(e)) => Event::Skipped(e),
                Err(e) => {
                    let _ = events.send((slot, Event::Gone(e.to_string())));
                    break;
                }
            };
            if events.send((slot, ev)).is_err() {
                break;
            }
        }
    });
    Ok(Link { stream, tx: Some(tx), reader: Some(reader), writer: Some(writer) })
}

struct Sequencer<'a> {
    cfg: &'a MasterConfig,
    combiner: Combiner<'a>,
    pending: BTreeMap<u64, Pending>,
    next_seq: u64,
    summary: Summary,
    latency_total: f64,
}

impl Sequencer<'_> {
    fn stream(
        &mut self,
        mut records: impl Iterator<Item = Vec<f64>>,
        links: &mut [Link],
        events: &Receiver<(usize, Event)>,
        sink: &mut dyn FnMut(&Outcome),
    ) -> Result<(), StreamError> {
        let mut exhausted = false;
        loop {
            while !exhausted && self.pending.len() < self.cfg.window {
                match records.next() {
                    Some(features) => self.broadcast(features, links),
                    None => exhausted = true,
                }
            }
            self.flush(links, sink);
            let Some(front) = self.pending.values().next() else {
                if exhausted {
                    return Ok(());
                }
                continue;
            };
            let wait = front.deadline.saturating_duration_since(Instant::now());
            match events.recv_timeout(wait) {
                Ok((slot, ev)) => self.handle(slot, ev, links),
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => links.iter_mut().for_each(Link::drop_connection),
            }
        }
    }

    fn broadcast(&mut self, features: Vec<f64>, links: &mut [Link]) {
        let seq = self.next_seq;
        self.next_seq += 1;
        let bytes = Arc::new(Message::Record { seq, features }.encode());
        for link in links.iter_mut() {
            link.send(&bytes);
        }
        let sent = Instant::now();
        let replies = links.iter().map(|_| None).collect();
        self.pending.insert(seq, Pending { sent, deadline: sent + self.cfg.timeout, replies });
    }

    fn violation(&mut self, slot: usize, links: &mut [Link], err: StreamError) {
        log::warn!("dropping worker in slot {slot}: {err}");
        if links[slot].alive() {
            self.summary.dropped_workers += 1;
        }
        links[slot].drop_connection();
    }

    fn handle(&mut self, slot: usize, ev: Event, links: &mut [Link]) {
        let msg = match ev {
            Event::Frame(m) => m,
            Event::Skipped(e) => {
                log::warn!("slot {slot} sent a malformed frame: {e}");
                return;
            }
            Event::Gone(why) => {
                if links[slot].alive() {
                    log::warn!("worker in slot {slot} disconnected: {why}");
                    self.summary.dropped_workers += 1;
                }
                links[slot].drop_connection();
                return;
            }
        };
        let (seq, reply) = match (msg, &self.combiner) {
            (Message::Vote { seq, class, probs }, Combiner::Vote { n_classes }) => {
                if probs.len() != *n_classes || usize::from(class) >= *n_classes {
                    return self.violation(slot, links, StreamError::Protocol(format!("VOTE for seq {seq} has wrong class count")));
                }
                (seq, Reply::Vote(MemberVote { class: usize::from(class), probs }))
            }
            (Message::Embed { seq, embedding }, Combiner::Head { widths, .. }) => {
                if embedding.len() != widths[slot] {
                    return self.violation(slot, links, StreamError::Protocol(format!("EMBED for seq {seq} has width {}", embedding.len())));
                }
                (seq, Reply::Embed(embedding))
            }
            (Message::Error { code, message }, _) => match error_seq(&message) {
                Some(seq) => (seq, Reply::Failed { code, message }),
                None => {
                    log::warn!("slot {slot} reported: {message}");
                    return;
                }
            },
            (Message::Heartbeat, _) => return,
            (other, _) => {
                let err = StreamError::Protocol(format!("unexpected message type 0x{:02x}", other.type_byte()));
                return self.violation(slot, links, err);
            }
        };
        if seq >= self.next_seq {
            return self.violation(slot, links, StreamError::Protocol(format!("reply for unsent seq {seq}")));
        }
        let Some(p) = self.pending.get_mut(&seq) else {
            log::debug!("late reply for seq {seq} from slot {slot}");
            return;
        };
        if p.replies[slot].is_some() {
            return self.violation(slot, links, StreamError::DuplicateReply { slot, seq });
        }
        p.replies[slot] = Some(reply);
    }

    /// Finalises records from the front of the window while they are
    /// complete or overdue, so outcomes leave in seq order.
    fn flush(&mut self, links: &[Link], sink: &mut dyn FnMut(&Outcome)) {
        let now = Instant::now();
        while let Some(entry) = self.pending.first_entry() {
            let p = entry.get();
            let complete = p.replies.iter().zip(links).all(|(r, l)| r.is_some() || !l.alive());
            if !complete && now < p.deadline {
                break;
            }
            let seq = *entry.key();
            let p = entry.remove();
            let outcome = self.combine(seq, &p);
            match &outcome {
                Outcome::Result { degraded, .. } => {
                    self.summary.results += 1;
                    self.summary.degraded += u64::from(*degraded);
                    self.latency_total += now.duration_since(p.sent).as_secs_f64() * 1e3;
                }
                Outcome::Error { .. } => self.summary.errors += 1,
            }
            sink(&outcome);
        }
    }

    fn combine(&self, seq: u64, p: &Pending) -> Outcome {
        let n_slots = p.replies.len();
        let first_failure = || {
            p.replies.iter().flatten().find_map(|r| match r {
                Reply::Failed { code, message } => Some((*code, message.clone())),
                _ => None,
            })
        };
        let no_responders = || {
            let (code, message) = first_failure().unwrap_or((code::NO_RESPONDERS, "no worker replied".to_string()));
            let message = message.split_once(": ").map_or(message.clone(), |(_, m)| m.to_string());
            Outcome::Error { seq, code, message }
        };
        match &self.combiner {
            Combiner::Vote { n_classes } => {
                let votes: Vec<MemberVote> = p
                    .replies
                    .iter()
                    .filter_map(|r| match r {
                        Some(Reply::Vote(v)) => Some(v.clone()),
                        _ => None,
                    })
                    .collect();
                let degraded = votes.len() < n_slots;
                match votes.len() {
                    0 => no_responders(),
                    1 => Outcome::Result { seq, class: votes[0].class, degraded: true },
                    _ => match hard_vote(&votes, *n_classes) {
                        Ok(v) => Outcome::Result { seq, class: v.class, degraded },
                        Err(e) => Outcome::Error { seq, code: code::BAD_VALUE, message: e.to_string() },
                    },
                }
            }
            Combiner::Head { model, widths } => {
                let mut concat = Vec::with_capacity(widths.iter().sum());
                let mut missing = 0;
                for (r, &w) in p.replies.iter().zip(widths) {
                    match r {
                        Some(Reply::Embed(e)) => concat.extend_from_slice(e),
                        _ => {
                            missing += 1;
                            concat.extend(std::iter::repeat_n(0.0, w));
                        }
                    }
                }
                if missing == n_slots {
                    return no_responders();
                }
                if missing > 0 {
                    log::warn!("seq {seq}: {missing} branch embedding(s) missing, zero-filled");
                }
                match model.apply_head(&concat) {
                    Ok(probs) => Outcome::Result { seq, class: crate::argmax(&probs), degraded: missing > 0 },
                    Err(e) => Outcome::Error { seq, code: code::BAD_VALUE, message: e.to_string() },
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{fit_model, ModelSpec};
    use crate::stream::{run_worker, Role, WorkerConfig};
    use crate::synth::blobs;

    fn shallow_model() -> (TrainedModel, crate::matrix::Matrix) {
        let (x, y) = blobs(15, 3, 4, 3.0, 1.0, 7);
        let spec = ModelSpec::new(ModelKind::ShallowWaves).with("n_trees", 5).with("n_rounds", 5);
        (fit_model(&spec, &x, &y, 3, 1).unwrap(), x)
    }

    fn master(mode: Mode, timeout_ms: u64) -> Master {
        let cfg = MasterConfig {
            listen: "127.0.0.1:0".into(),
            mode,
            timeout: Duration::from_millis(timeout_ms),
            accept_timeout: Duration::from_secs(20),
            ..MasterConfig::default()
        };
        Master::bind(cfg).unwrap()
    }

    /// A hand-driven shallow worker: `reply(seq)` decides what to send back.
    fn fake_worker(addr: SocketAddr, slot: u8, reply: impl Fn(u64) -> Vec<Message> + Send + 'static) -> JoinHandle<()> {
        thread::spawn(move || {
            let s = TcpStream::connect(addr).unwrap();
            let hello = Message::Hello { version: PROTOCOL_VERSION, worker_id: slot.into(), role: Role::Shallow, slot };
            write_message(&mut &s, &hello).unwrap();
            assert!(matches!(read_message(&mut &s).unwrap(), Message::Assign { .. }));
            write_message(&mut &s, &Message::Heartbeat).unwrap();
            let mut r = BufReader::new(&s);
            while let Ok(Message::Record { seq, .. }) = read_message(&mut r) {
                for m in reply(seq) {
                    if write_message(&mut &s, &m).is_err() {
                        return;
                    }
                }
            }
        })
    }

    fn vote(seq: u64, class: u16) -> Message {
        let mut probs = vec![0.0; 3];
        probs[usize::from(class)] = 1.0;
        Message::Vote { seq, class, probs }
    }

    fn collect(m: &Master, model: &TrainedModel, records: Vec<Vec<f64>>) -> (Vec<Outcome>, Summary) {
        let mut out = Vec::new();
        let summary = m.run(model, records, &mut |o| out.push(o.clone())).unwrap();
        (out, summary)
    }

    #[test]
    fn majority_of_fake_votes_wins_in_order() {
        let (model, _) = shallow_model();
        let m = master(Mode::Shallow, 2000);
        let addr = m.local_addr().unwrap();
        let ws: Vec<_> = [0u16, 0, 1].iter().enumerate().map(|(s, &c)| fake_worker(addr, s as u8, move |seq| vec![vote(seq, c)])).collect();
        let (out, summary) = collect(&m, &model, vec![vec![0.0; 4]; 100]);
        ws.into_iter().for_each(|w| w.join().unwrap());
        assert_eq!(out.len(), 100);
        for (i, o) in out.iter().enumerate() {
            assert_eq!(*o, Outcome::Result { seq: i as u64, class: 0, degraded: false });
        }
        assert_eq!((summary.results, summary.degraded, summary.errors), (100, 0, 0));
    }

    #[test]
    fn silent_worker_degrades_and_single_voter_falls_back() {
        let (model, _) = shallow_model();
        let m = master(Mode::Shallow, 100);
        let addr = m.local_addr().unwrap();
        let ws = vec![
            fake_worker(addr, 0, |seq| vec![vote(seq, 2)]),
            fake_worker(addr, 1, |seq| if seq % 2 == 0 { vec![vote(seq, 2)] } else { vec![] }),
            fake_worker(addr, 2, |_| vec![]),
        ];
        let (out, summary) = collect(&m, &model, vec![vec![0.0; 4]; 6]);
        ws.into_iter().for_each(|w| w.join().unwrap());
        let seqs: Vec<u64> = out.iter().map(Outcome::seq).collect();
        assert_eq!(seqs, (0..6).collect::<Vec<_>>());
        for o in &out {
            assert_eq!(*o, Outcome::Result { seq: o.seq(), class: 2, degraded: true });
        }
        assert_eq!(summary.degraded, 6);
    }

    #[test]
    fn no_responders_is_a_per_record_error() {
        let (model, _) = shallow_model();
        let m = master(Mode::Shallow, 50);
        let addr = m.local_addr().unwrap();
        let ws: Vec<_> = (0..3)
            .map(|s| {
                fake_worker(addr, s, |seq| {
                    vec![Message::Error { code: code::FEATURE_WIDTH, message: format!("seq={seq}: expected 4 features, found 2") }]
                })
            })
            .collect();
        let (out, summary) = collect(&m, &model, vec![vec![0.0; 2]; 3]);
        ws.into_iter().for_each(|w| w.join().unwrap());
        assert_eq!(summary.errors, 3);
        for (i, o) in out.iter().enumerate() {
            let Outcome::Error { seq, code: c, message } = o else { panic!("{o:?}") };
            assert_eq!((*seq, *c), (i as u64, code::FEATURE_WIDTH));
            assert_eq!(message, "expected 4 features, found 2");
            let Message::Error { message, .. } = o.to_message() else { unreachable!() };
            assert_eq!(error_seq(&message), Some(i as u64));
        }
    }

    #[test]
    fn duplicate_reply_drops_the_worker() {
        let (model, _) = shallow_model();
        let m = master(Mode::Shallow, 200);
        let addr = m.local_addr().unwrap();
        let ws = vec![
            fake_worker(addr, 0, |seq| vec![vote(seq, 1)]),
            fake_worker(addr, 1, |seq| vec![vote(seq, 1)]),
            fake_worker(addr, 2, |seq| vec![vote(seq, 0), vote(seq, 0)]),
        ];
        let (out, summary) = collect(&m, &model, vec![vec![0.0; 4]; 5]);
        ws.into_iter().for_each(|w| w.join().unwrap());
        assert_eq!(summary.dropped_workers, 1);
        assert_eq!(out.len(), 5);
        assert!(out.iter().all(|o| matches!(o, Outcome::Result { class: 1, .. })));
    }

    #[test]
    fn incomplete_roster_is_reported() {
        let (model, _) = shallow_model();
        let cfg = MasterConfig {
            listen: "127.0.0.1:0".into(),
            accept_timeout: Duration::from_millis(200),
            ..MasterConfig::default()
        };
        let m = Master::bind(cfg).unwrap();
        let w = fake_worker(m.local_addr().unwrap(), 0, |_| vec![]);
        let err = m.run(&model, Vec::<Vec<f64>>::new(), &mut |_| {}).unwrap_err();
        assert!(matches!(err, StreamError::RosterIncomplete { expected: 3, connected: 1 }), "{err}");
        drop(m);
        let _ = w.join();
    }

    fn real_workers(addr: SocketAddr, role: Role, n: u8) -> Vec<JoinHandle<()>> {
        (0..n)
            .map(|slot| {
                let cfg = WorkerConfig::new(addr.to_string(), role, slot);
                thread::spawn(move || {
                    run_worker(&cfg).unwrap();
                })
            })
            .collect()
    }

    #[test]
    fn shallow_stream_matches_local_prediction() {
        let (model, x) = shallow_model();
        let m = master(Mode::Shallow, 5000);
        let ws = real_workers(m.local_addr().unwrap(), Role::Shallow, 3);
        let rows: Vec<Vec<f64>> = x.iter_rows().map(<[f64]>::to_vec).collect();
        let (out, summary) = collect(&m, &model, rows.clone());
        ws.into_iter().for_each(|w| w.join().unwrap());
        assert_eq!(summary.degraded, 0);
        for (row, o) in rows.iter().zip(&out) {
            let Outcome::Result { class, .. } = o else { panic!("{o:?}") };
            assert_eq!(*class, model.predict(row).unwrap());
        }
    }

    #[test]
    fn deep_stream_matches_local_prediction() {
        let (x, y) = blobs(6, 3, 4, 3.0, 1.0, 3);
        let spec = ModelSpec::new(ModelKind::DeepWaves).with("epochs", 1).with("units", 3).with("filters", 3);
        let model = fit_model(&spec, &x, &y, 3, 2).unwrap();
        let m = master(Mode::Deep, 5000);
        let ws = real_workers(m.local_addr().unwrap(), Role::Deep, 4);
        let rows: Vec<Vec<f64>> = x.iter_rows().map(<[f64]>::to_vec).collect();
        let (out, summary) = collect(&m, &model, rows.clone());
        ws.into_iter().for_each(|w| w.join().unwrap());
        assert_eq!((summary.results, summary.degraded), (rows.len() as u64, 0));
        for (row, o) in rows.iter().zip(&out) {
            let Outcome::Result { class, .. } = o else { panic!("{o:?}") };
            assert_eq!(*class, model.predict(row).unwrap());
        }
    }

    #[test]
    fn wrong_model_kind_is_refused() {
        let (model, _) = shallow_model();
        let m = master(Mode::Deep, 100);
        let err = m.run(&model, Vec::<Vec<f64>>::new(), &mut |_| {}).unwrap_err();
        assert!(matches!(err, StreamError::WrongModel { .. }));
    }
}
