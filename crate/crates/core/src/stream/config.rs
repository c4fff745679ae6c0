//! Master and worker settings, loadable from `key=value` files.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use super::frame::Role;
use super::StreamError;

/// Which ensemble the cluster serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Three ShallowWaves members, hard vote at the master.
    Shallow,
    /// Four DeepWaves branches, linear head at the master.
    Deep,
}

impl Mode {
    pub fn n_slots(self) -> usize {
        match self {
            Mode::Shallow => 3,
            Mode::Deep => 4,
        }
    }

    pub fn role(self) -> Role {
        match self {
            Mode::Shallow => Role::Shallow,
            Mode::Deep => Role::Deep,
        }
    }

    pub fn parse(s: &str) -> Result<Self, StreamError> {
        match s {
            "shallow" => Ok(Mode::Shallow),
            "deep" => Ok(Mode::Deep),
            _ => Err(StreamError::Config(format!("mode must be shallow or deep, not `{s}`"))),
        }
    }
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, StreamError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| StreamError::Config(format!("line {}: expected key=value", i + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

struct Kv<'a> {
    map: &'a BTreeMap<String, String>,
    known: &'static [&'static str],
}

impl Kv<'_> {
    fn check(&self) -> Result<(), StreamError> {
        match self.map.keys().find(|k| !self.known.contains(&k.as_str())) {
            Some(k) => Err(StreamError::Config(format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }

    fn get<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, StreamError> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| StreamError::Config(format!("bad value `{v}` for `{key}`"))),
        }
    }

    fn millis(&self, key: &str, default: u64) -> Result<Duration, StreamError> {
        Ok(Duration::from_millis(self.get(key, default)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MasterConfig {
    pub listen: String,
    pub mode: Mode,
    /// Trained ShallowWaves or DeepWaves artifact; members, branches and
    /// the deep head come from it.
    pub model: Option<PathBuf>,
    /// How long to wait for replies to a record.
    pub timeout: Duration,
    /// Maximum records in flight.
    pub window: usize,
    /// How long to wait for the full roster to connect and load.
    pub accept_timeout: Duration,
}

impl Default for MasterConfig {
    fn default() -> Self {
        MasterConfig {
            listen: "127.0.0.1:7070".into(),
            mode: Mode::Shallow,
            model: None,
            timeout: Duration::from_millis(1000),
            window: 64,
            accept_timeout: Duration::from_secs(30),
        }
    }
}

impl MasterConfig {
    pub const KEYS: &'static [&'static str] = &["listen", "mode", "model", "timeout_ms", "window", "accept_timeout_ms"];

    pub fn from_kv(map: &BTreeMap<String, String>) -> Result<Self, StreamError> {
        let kv = Kv { map, known: Self::KEYS };
        kv.check()?;
        let d = MasterConfig::default();
        let cfg = MasterConfig {
            listen: kv.get("listen", d.listen)?,
            mode: map.get("mode").map(|m| Mode::parse(m)).transpose()?.unwrap_or(d.mode),
            model: map.get("model").map(PathBuf::from),
            timeout: kv.millis("timeout_ms", 1000)?,
            window: kv.get("window", d.window)?,
            accept_timeout: kv.millis("accept_timeout_ms", 30_000)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), StreamError> {
        if self.window == 0 {
            return Err(StreamError::Config("window must be >= 1".into()));
        }
        if self.timeout.is_zero() {
            return Err(StreamError::Config("timeout_ms must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerConfig {
    pub connect: String,
    pub role: Role,
    pub slot: u8,
    pub worker_id: u16,
    /// How long to keep retrying the initial connection.
    pub connect_timeout: Duration,
}

impl WorkerConfig {
    pub const KEYS: &'static [&'static str] = &["connect", "role", "slot", "worker_id", "connect_timeout_ms"];

    pub fn new(connect: impl Into<String>, role: Role, slot: u8) -> Self {
        WorkerConfig { connect: connect.into(), role, slot, worker_id: u16::from(slot), connect_timeout: Duration::from_secs(10) }
    }

    pub fn from_kv(map: &BTreeMap<String, String>) -> Result<Self, StreamError> {
        let kv = Kv { map, known: Self::KEYS };
        kv.check()?;
        let role = Mode::parse(map.get("role").map_or("shallow", String::as_str))?.role();
        let slot: u8 = kv.get("slot", 0)?;
        let mut cfg = WorkerConfig::new(kv.get("connect", "127.0.0.1:7070".to_string())?, role, slot);
        cfg.worker_id = kv.get("worker_id", u16::from(slot))?;
        cfg.connect_timeout = kv.millis("connect_timeout_ms", 10_000)?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn master_defaults_and_overrides() {
        let cfg = MasterConfig::from_kv(&parse_kv("# cluster\nmode = deep\nwindow=8\n").unwrap()).unwrap();
        assert_eq!(cfg.mode, Mode::Deep);
        assert_eq!(cfg.window, 8);
        assert_eq!(cfg.timeout, Duration::from_millis(1000));
        assert_eq!(MasterConfig::default().window, 64);
        assert!(MasterConfig::from_kv(&parse_kv("window=0").unwrap()).is_err());
        assert!(MasterConfig::from_kv(&parse_kv("colour=red").unwrap()).is_err());
        assert!(parse_kv("no equals sign").is_err());
    }

    #[test]
    fn worker_from_kv() {
        let cfg = WorkerConfig::from_kv(&parse_kv("role=deep\nslot=3\nconnect=10.0.0.1:9000").unwrap()).unwrap();
        assert_eq!(cfg.role, Role::Deep);
        assert_eq!(cfg.slot, 3);
        assert_eq!(cfg.worker_id, 3);
        assert_eq!(cfg.connect, "10.0.0.1:9000");
        assert!(WorkerConfig::from_kv(&parse_kv("slot=300").unwrap()).is_err());
    }
}
