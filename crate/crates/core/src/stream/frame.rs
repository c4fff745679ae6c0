//! Wire frames: `len u32 | type u8 | payload`, where `len` counts the type
//! byte plus the payload. Integers are big-endian, reals are IEEE-754 f64.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const PROTOCOL_VERSION: u8 = 1;
/// Largest accepted `len` field (type byte + payload).
pub const MAX_FRAME_LEN: u32 = 1 << 30;
const HEADER: usize = 4;

pub mod kind {
    pub const HELLO: u8 = 0x01;
    pub const ASSIGN: u8 = 0x02;
    pub const RECORD: u8 = 0x03;
    pub const VOTE: u8 = 0x04;
    pub const EMBED: u8 = 0x05;
    pub const RESULT: u8 = 0x06;
    pub const HEARTBEAT: u8 = 0x07;
    pub const ERROR: u8 = 0x7E;
    pub const SHUTDOWN: u8 = 0x7F;
}

/// Codes carried by ERROR frames.
pub mod code {
    pub const MALFORMED_FRAME: u16 = 1;
    pub const UNKNOWN_TYPE: u16 = 2;
    pub const FEATURE_WIDTH: u16 = 3;
    pub const ASSIGN_REJECTED: u16 = 4;
    pub const PROTOCOL: u16 = 5;
    pub const NO_RESPONDERS: u16 = 6;
    pub const BAD_VALUE: u16 = 7;
    pub const ROSTER: u16 = 8;
}

/// What a worker hosts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    /// One ShallowWaves member; answers with VOTE.
    Shallow,
    /// One DeepWaves branch; answers with EMBED.
    Deep,
}

impl Role {
    pub fn byte(self) -> u8 {
        match self {
            Role::Shallow => 1,
            Role::Deep => 2,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(Role::Shallow),
            2 => Some(Role::Deep),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello { version: u8, worker_id: u16, role: Role, slot: u8 },
    Assign { artifact: Vec<u8> },
    Record { seq: u64, features: Vec<f64> },
    Vote { seq: u64, class: u16, probs: Vec<f64> },
    Embed { seq: u64, embedding: Vec<f64> },
    Result { seq: u64, class: u16, degraded: bool },
    Heartbeat,
    Error { code: u16, message: String },
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    /// More input is needed; at least `needed` bytes in total.
    #[error("need at least {needed} bytes")]
    ShortBuffer { needed: usize },
    #[error("bad frame length {declared}: {reason}")]
    BadLength { declared: u64, reason: &'static str },
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("malformed payload for type 0x{kind:02x}: {reason}")]
    BadPayload { kind: u8, reason: &'static str },
}

impl Message {
    pub fn type_byte(&self) -> u8 {
        match self {
            Message::Hello { .. } => kind::HELLO,
            Message::Assign { .. } => kind::ASSIGN,
            Message::Record { .. } => kind::RECORD,
            Message::Vote { .. } => kind::VOTE,
            Message::Embed { .. } => kind::EMBED,
            Message::Result { .. } => kind::RESULT,
            Message::Heartbeat => kind::HEARTBEAT,
            Message::Error { .. } => kind::ERROR,
            Message::Shutdown => kind::SHUTDOWN,
        }
    }

    /// Appends the encoded frame to `out`.
    ///
    /// Panics if a variable-length field exceeds its wire limit (more than
    /// `u32::MAX` elements or a frame beyond [`MAX_FRAME_LEN`]).
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        let start = out.len();
        out.extend_from_slice(&[0; HEADER]);
        out.push(self.type_byte());
        let reals = |out: &mut Vec<u8>, v: &[f64]| {
            out.extend_from_slice(&u32::try_from(v.len()).expect("vector too long for frame").to_be_bytes());
            for x in v {
                out.extend_from_slice(&x.to_be_bytes());
            }
        };
        match self {
            Message::Hello { version, worker_id, role, slot } => {
                out.push(*version);
                out.extend_from_slice(&worker_id.to_be_bytes());
                out.push(role.byte());
                out.push(*slot);
            }
            Message::Assign { artifact } => {
                out.extend_from_slice(&u32::try_from(artifact.len()).expect("artifact too large").to_be_bytes());
                out.extend_from_slice(artifact);
            }
            Message::Record { seq, features } => {
                out.extend_from_slice(&seq.to_be_bytes());
                reals(out, features);
            }
            Message::Vote { seq, class, probs } => {
                out.extend_from_slice(&seq.to_be_bytes());
                out.extend_from_slice(&class.to_be_bytes());
                reals(out, probs);
            }
            Message::Embed { seq, embedding } => {
                out.extend_from_slice(&seq.to_be_bytes());
                reals(out, embedding);
            }
            Message::Result { seq, class, degraded } => {
                out.extend_from_slice(&seq.to_be_bytes());
                out.extend_from_slice(&class.to_be_bytes());
                out.push(u8::from(*degraded));
            }
            Message::Heartbeat | Message::Shutdown => {}
            Message::Error { code, message } => {
                out.extend_from_slice(&code.to_be_bytes());
                out.extend_from_slice(message.as_bytes());
            }
        }
        let len = u32::try_from(out.len() - start - HEADER).ok().filter(|&l| l <= MAX_FRAME_LEN).expect("frame too large");
        out[start..start + HEADER].copy_from_slice(&len.to_be_bytes());
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out
    }
}

/// Validates a `len` field and returns it.
fn check_len(declared: u32) -> Result<usize, FrameError> {
    if declared == 0 {
        return Err(FrameError::BadLength { declared: 0, reason: "frame must contain a type byte" });
    }
    if declared > MAX_FRAME_LEN {
        return Err(FrameError::BadLength { declared: declared.into(), reason: "exceeds maximum frame size" });
    }
    Ok(declared as usize)
}

/// Total size of the frame at the start of `buf`, once its header is
/// available. Errors here mean the stream can no longer be delimited.
pub fn frame_extent(buf: &[u8]) -> Result<usize, FrameError> {
    if buf.len() < HEADER {
        return Err(FrameError::ShortBuffer { needed: HEADER });
    }
    let len = check_len(u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]))?;
    Ok(HEADER + len)
}

struct Body<'a> {
    kind: u8,
    rest: &'a [u8],
}

impl<'a> Body<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FrameError> {
        if self.rest.len() < n {
            return Err(FrameError::BadLength { declared: self.rest.len() as u64, reason: "payload shorter than its fields" });
        }
        let (head, tail) = self.rest.split_at(n);
        self.rest = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, FrameError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FrameError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, FrameError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, FrameError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn reals(&mut self) -> Result<Vec<f64>, FrameError> {
        let n = self.u32()? as usize;
        // Size check before allocating: the payload must already hold n reals.
        if self.rest.len() / 8 < n {
            return Err(FrameError::BadLength { declared: n as u64, reason: "vector longer than payload" });
        }
        Ok(self.take(n * 8)?.chunks_exact(8).map(|c| f64::from_be_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn finish(self) -> Result<(), FrameError> {
        if self.rest.is_empty() {
            Ok(())
        } else {
            Err(FrameError::BadLength { declared: self.rest.len() as u64, reason: "trailing payload bytes" })
        }
    }

    fn bad(&self, reason: &'static str) -> FrameError {
        FrameError::BadPayload { kind: self.kind, reason }
    }
}

/// Decodes a type byte plus payload (everything after the length field).
pub fn decode_body(body: &[u8]) -> Result<Message, FrameError> {
    let (&kind, rest) = body.split_first().ok_or(FrameError::BadLength { declared: 0, reason: "frame must contain a type byte" })?;
    let mut b = Body { kind, rest };
    let msg = match kind {
        kind::HELLO => {
            let version = b.u8()?;
            let worker_id = b.u16()?;
            let role = Role::from_byte(b.u8()?).ok_or_else(|| b.bad("role must be 1 or 2"))?;
            let slot = b.u8()?;
            Message::Hello { version, worker_id, role, slot }
        }
        kind::ASSIGN => {
            let n = b.u32()? as usize;
            Message::Assign { artifact: b.take(n)?.to_vec() }
        }
        kind::RECORD => Message::Record { seq: b.u64()?, features: b.reals()? },
        kind::VOTE => Message::Vote { seq: b.u64()?, class: b.u16()?, probs: b.reals()? },
        kind::EMBED => Message::Embed { seq: b.u64()?, embedding: b.reals()? },
        kind::RESULT => {
            let seq = b.u64()?;
            let class = b.u16()?;
            let degraded = match b.u8()? {
                0 => false,
                1 => true,
                _ => return Err(b.bad("degraded flag must be 0 or 1")),
            };
            Message::Result { seq, class, degraded }
        }
        kind::HEARTBEAT => Message::Heartbeat,
        kind::SHUTDOWN => Message::Shutdown,
        kind::ERROR => {
            let code = b.u16()?;
            let text = std::str::from_utf8(b.rest).map_err(|_| b.bad("message is not utf-8"))?;
            b.rest = &[];
            Message::Error { code, message: text.to_string() }
        }
        other => return Err(FrameError::UnknownType(other)),
    };
    b.finish()?;
    Ok(msg)
}

/// Decodes the frame at the start of `buf`, returning it with the number of
/// bytes it occupied. A partial frame yields [`FrameError::ShortBuffer`].
pub fn decode_frame(buf: &[u8]) -> Result<(Message, usize), FrameError> {
    let extent = frame_extent(buf)?;
    if buf.len() < extent {
        return Err(FrameError::ShortBuffer { needed: extent });
    }
    Ok((decode_body(&buf[HEADER..extent])?, extent))
}

/// Incremental decoder over an arbitrary chunking of a byte stream.
///
/// A malformed frame whose length field is valid is consumed and reported,
/// and decoding continues with the next frame. An invalid length field
/// leaves the stream undelimitable: the decoder reports it and stays failed.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    failed: Option<FrameError>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        if self.failed.is_none() {
            self.buf.extend_from_slice(bytes);
        }
    }

    /// Bytes received but not yet consumed.
    pub fn pending(&self) -> usize {
        self.buf.len()
    }

    /// Next complete frame, `None` when more bytes are needed.
    pub fn next_frame(&mut self) -> Option<Result<Message, FrameError>> {
        if let Some(e) = &self.failed {
            return Some(Err(e.clone()));
        }
        let extent = match frame_extent(&self.buf) {
            Ok(n) => n,
            Err(FrameError::ShortBuffer { .. }) => return None,
            Err(e) => {
                self.failed = Some(e.clone());
                self.buf = Vec::new();
                return Some(Err(e));
            }
        };
        if self.buf.len() < extent {
            return None;
        }
        let result = decode_body(&self.buf[HEADER..extent]);
        self.buf.drain(..extent);
        Some(result)
    }
}

/// Outcome of reading one frame from a blocking stream.
#[derive(Debug, Error)]
pub enum ReadError {
    #[error("connection closed")]
    Closed,
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    /// The frame was consumed; the stream is still aligned.
    #[error("skipped frame: {0}")]
    Skipped(FrameError),
    /// The length field was invalid; the stream cannot be resynchronised.
    #[error("stream corrupt: {0}")]
    Fatal(FrameError),
}

/// Reads exactly one frame. The body buffer grows only as bytes arrive, so
/// a huge declared length from a peer cannot force a large allocation.
pub fn read_message<R: Read>(r: &mut R) -> Result<Message, ReadError> {
    let mut header = [0u8; HEADER];
    match r.read_exact(&mut header) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Err(ReadError::Closed),
        Err(e) => return Err(e.into()),
    }
    let len = check_len(u32::from_be_bytes(header)).map_err(ReadError::Fatal)?;
    let mut body = Vec::with_capacity(len.min(1 << 16));
    r.take(len as u64).read_to_end(&mut body)?;
    if body.len() < len {
        return Err(ReadError::Closed);
    }
    decode_body(&body).map_err(ReadError::Skipped)
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> io::Result<()> {
    w.write_all(&msg.encode())?;
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn heartbeat_bytes() {
        assert_eq!(Message::Heartbeat.encode(), [0, 0, 0, 1, 7]);
        assert_eq!(Message::Shutdown.encode(), [0, 0, 0, 1, 0x7F]);
    }

    #[test]
    fn record_layout() {
        let bytes = Message::Record { seq: 1, features: vec![1.0] }.encode();
        assert_eq!(&bytes[..5], &[0, 0, 0, 21, 3]);
        assert_eq!(&bytes[5..13], &1u64.to_be_bytes());
        assert_eq!(&bytes[13..17], &1u32.to_be_bytes());
        assert_eq!(&bytes[17..], &1.0f64.to_be_bytes());
        assert_eq!(bytes.len(), 4 + 21);
    }

    #[test]
    fn truncated_record_resumes() {
        let bytes = Message::Record { seq: 9, features: vec![0.5, -2.0] }.encode();
        let mut d = FrameDecoder::new();
        d.push(&bytes[..10]);
        assert!(d.next_frame().is_none());
        assert_eq!(decode_frame(&bytes[..10]), Err(FrameError::ShortBuffer { needed: bytes.len() }));
        d.push(&bytes[10..]);
        assert_eq!(d.next_frame(), Some(Ok(Message::Record { seq: 9, features: vec![0.5, -2.0] })));
        assert!(d.next_frame().is_none());
        assert_eq!(d.pending(), 0);
    }

    #[test]
    fn structured_errors() {
        assert!(matches!(decode_frame(&[0, 0, 0, 0]), Err(FrameError::BadLength { declared: 0, .. })));
        assert!(matches!(decode_frame(&[0x7F, 0, 0, 0, 1]), Err(FrameError::BadLength { .. })));
        assert_eq!(decode_frame(&[0, 0, 0, 1, 0x55]), Err(FrameError::UnknownType(0x55)));
        // RECORD that claims two reals but carries one.
        let mut bad = Message::Record { seq: 1, features: vec![1.0] }.encode();
        bad[16] = 2;
        assert!(matches!(decode_frame(&bad), Err(FrameError::BadLength { .. })));
        let mut hello = Message::Hello { version: 1, worker_id: 3, role: Role::Deep, slot: 0 }.encode();
        hello[8] = 9;
        assert!(matches!(decode_frame(&hello), Err(FrameError::BadPayload { kind: kind::HELLO, .. })));
        let mut res = Message::Result { seq: 1, class: 2, degraded: true }.encode();
        *res.last_mut().unwrap() = 2;
        assert!(matches!(decode_frame(&res), Err(FrameError::BadPayload { .. })));
        let mut err = Message::Error { code: 1, message: "x".into() }.encode();
        *err.last_mut().unwrap() = 0xFF;
        assert!(matches!(decode_frame(&err), Err(FrameError::BadPayload { .. })));
        // Trailing bytes inside a heartbeat.
        assert!(matches!(decode_frame(&[0, 0, 0, 2, 7, 0]), Err(FrameError::BadLength { .. })));
    }

    #[test]
    fn decoder_skips_bad_frame_and_continues() {
        let mut d = FrameDecoder::new();
        d.push(&[0, 0, 0, 1, 0x55]);
        d.push(&Message::Heartbeat.encode());
        assert_eq!(d.next_frame(), Some(Err(FrameError::UnknownType(0x55))));
        assert_eq!(d.next_frame(), Some(Ok(Message::Heartbeat)));
        d.push(&[0, 0, 0, 0]);
        assert!(matches!(d.next_frame(), Some(Err(FrameError::BadLength { .. }))));
        d.push(&Message::Heartbeat.encode());
        assert!(matches!(d.next_frame(), Some(Err(FrameError::BadLength { .. }))));
    }

    #[test]
    fn blocking_reader() {
        let mut bytes = Message::Vote { seq: 4, class: 1, probs: vec![0.25, 0.75] }.encode();
        bytes.extend([0, 0, 0, 1, 0x55]);
        bytes.extend(Message::Shutdown.encode());
        bytes.extend([0, 0, 0, 9, 3]);
        let mut r = bytes.as_slice();
        assert_eq!(read_message(&mut r).unwrap(), Message::Vote { seq: 4, class: 1, probs: vec![0.25, 0.75] });
        assert!(matches!(read_message(&mut r), Err(ReadError::Skipped(FrameError::UnknownType(0x55)))));
        assert_eq!(read_message(&mut r).unwrap(), Message::Shutdown);
        assert!(matches!(read_message(&mut r), Err(ReadError::Closed)));
        assert!(matches!(read_message(&mut [0u8, 0, 0, 0].as_slice()), Err(ReadError::Fatal(_))));
    }

    fn reals() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(any::<f64>(), 0..12)
    }

    fn message() -> impl Strategy<Value = Message> {
        prop_oneof![
            (any::<u8>(), any::<u16>(), prop::bool::ANY, any::<u8>()).prop_map(|(version, worker_id, deep, slot)| {
                Message::Hello { version, worker_id, role: if deep { Role::Deep } else { Role::Shallow }, slot }
            }),
            prop::collection::vec(any::<u8>(), 0..64).prop_map(|artifact| Message::Assign { artifact }),
            (any::<u64>(), reals()).prop_map(|(seq, features)| Message::Record { seq, features }),
            (any::<u64>(), any::<u16>(), reals()).prop_map(|(seq, class, probs)| Message::Vote { seq, class, probs }),
            (any::<u64>(), reals()).prop_map(|(seq, embedding)| Message::Embed { seq, embedding }),
            (any::<u64>(), any::<u16>(), prop::bool::ANY).prop_map(|(seq, class, degraded)| Message::Result { seq, class, degraded }),
            Just(Message::Heartbeat),
            Just(Message::Shutdown),
            (any::<u16>(), ".{0,20}").prop_map(|(code, message)| Message::Error { code, message }),
        ]
    }

    /// Equality that treats reals bitwise, so NaN payloads compare equal.
    fn same(a: &Message, b: &Message) -> bool {
        a.encode() == b.encode()
    }

    proptest! {
        #[test]
        fn round_trip(msgs in prop::collection::vec(message(), 1..6), cut in 0usize..64) {
            let mut bytes = Vec::new();
            for m in &msgs {
                m.encode_into(&mut bytes);
            }
            let mut d = FrameDecoder::new();
            let cut = cut.min(bytes.len());
            d.push(&bytes[..cut]);
            let mut out = Vec::new();
            while let Some(r) = d.next_frame() {
                out.push(r.unwrap());
            }
            d.push(&bytes[cut..]);
            while let Some(r) = d.next_frame() {
                out.push(r.unwrap());
            }
            prop_assert_eq!(out.len(), msgs.len());
            for (a, b) in out.iter().zip(&msgs) {
                prop_assert!(same(a, b));
            }
        }

        #[test]
        fn noise_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..128)) {
            let _ = decode_frame(&bytes);
            let mut d = FrameDecoder::new();
            d.push(&bytes);
            for _ in 0..bytes.len() + 1 {
                if d.next_frame().is_none() { break; }
            }
        }
    }
}
