//! `.gwml` model artifacts.
//!
//! Layout (integers big-endian):
//!
//! ```text
//! "GWML" | version u16 | kind_len u8 | kind tag
//! section_count u16
//! per section: name_len u8 | name | len u32 | bytes | SHA-256(bytes)
//! ```
//!
//! The first section, `meta`, is human-readable `key=value` text. `scaler`
//! (optional) and `model` hold canonical JSON, which serialises floats in
//! shortest round-trip form, so save → load → save is byte-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use super::models::{ModelBody, ModelKind, ModelMeta, TrainedModel};
use super::BenchError;
use crate::dataset::{Feature, FeatureConfig, IfoEncoding, Scaler};

pub const MAGIC: &[u8; 4] = b"GWML";
pub const FORMAT_VERSION: u16 = 1;
pub const EXTENSION: &str = "gwml";

const DIGEST_LEN: usize = 32;

fn corrupt(name: &str) -> BenchError {
    BenchError::CorruptSection(name.to_string())
}

fn body_matches(kind: ModelKind, body: &ModelBody) -> bool {
    use ModelKind::*;
    match body {
        ModelBody::Majority { .. } => kind == Majority,
        ModelBody::Baseline(_) => matches!(kind, Knn | Gnb | LogReg),
        ModelBody::Tree(_) => matches!(kind, Cart | C45),
        ModelBody::AdaBoost(_) => matches!(kind, AdaBoostCart | AdaBoostC45),
        ModelBody::Forest(_) => matches!(kind, RfCart | RfC45 | ErtCart | ErtC45),
        ModelBody::Boosted(_) => matches!(kind, XgbGbtree | XgbGblinear | XgbDart),
        ModelBody::ShallowWaves(_) => kind == ShallowWaves,
        ModelBody::Network(_) => {
            matches!(kind, Perceptron | Mlp | Lstm | Cnn | Lstm5 | CnnMp4 | CnnLstmMp4 | CnnMpLstm4)
        }
        ModelBody::DeepWaves(_) => kind == DeepWaves,
        ModelBody::DeepBranch { .. } => kind == DeepBranch,
    }
}

fn check_list_item(what: &str, s: &str) -> Result<(), BenchError> {
    if s.is_empty() || s.contains([',', '\n', '\r', '=']) {
        return Err(BenchError::BadParam { key: what.to_string(), value: s.to_string(), reason: "cannot be stored in an artifact" });
    }
    Ok(())
}

fn render_meta(m: &ModelMeta) -> Result<String, BenchError> {
    let mut out = String::new();
    let _ = writeln!(out, "kind={}", m.kind.name());
    let _ = writeln!(out, "seed={}", m.seed);
    let _ = writeln!(out, "n_features={}", m.n_features);
    let _ = writeln!(out, "n_classes={}", m.n_classes);
    let _ = writeln!(out, "training_digest={}", m.training_digest);
    if let Some(slot) = m.slot {
        let _ = writeln!(out, "slot={slot}");
    }
    if let Some(f) = &m.features {
        let names: Vec<&str> = f.features.iter().map(|f| f.column()).collect();
        let _ = writeln!(out, "features={}", names.join(","));
        let _ = writeln!(out, "ifo_h1={:?}", f.ifo.h1);
        let _ = writeln!(out, "ifo_l1={:?}", f.ifo.l1);
        let _ = writeln!(out, "standardize={}", f.standardize);
    }
    if !m.class_names.is_empty() {
        for c in &m.class_names {
            check_list_item("class name", c)?;
        }
        let _ = writeln!(out, "classes={}", m.class_names.join(","));
    }
    for (k, v) in &m.params {
        check_list_item(k, k)?;
        check_list_item(k, v)?;
        let _ = writeln!(out, "param.{k}={v}");
    }
    Ok(out)
}

fn parse_meta(text: &str) -> Result<ModelMeta, BenchError> {
    let bad = || corrupt("meta");
    let mut kv = BTreeMap::new();
    let mut params = BTreeMap::new();
    for line in text.lines() {
        let (k, v) = line.split_once('=').ok_or_else(bad)?;
        let slot = match k.strip_prefix("param.") {
            Some(p) => params.insert(p.to_string(), v.to_string()),
            None => kv.insert(k.to_string(), v.to_string()),
        };
        if slot.is_some() {
            return Err(bad());
        }
    }
    let mut take = |k: &str| kv.remove(k);
    let num = |v: Option<String>| -> Result<u64, BenchError> { v.ok_or_else(bad)?.parse().map_err(|_| bad()) };
    let kind: ModelKind = take("kind").ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let seed = num(take("seed"))?;
    let n_features = num(take("n_features"))? as usize;
    let n_classes = num(take("n_classes"))? as usize;
    let training_digest = take("training_digest").ok_or_else(bad)?;
    let slot = take("slot").map(|s| s.parse::<usize>().map_err(|_| bad())).transpose()?;
    let features = match take("features") {
        Some(list) => {
            let features = list.split(',').map(|c| Feature::from_column(c).ok_or_else(bad)).collect::<Result<_, _>>()?;
            let real = |v: Option<String>| -> Result<f64, BenchError> { v.ok_or_else(bad)?.parse().map_err(|_| bad()) };
            let ifo = IfoEncoding { h1: real(take("ifo_h1"))?, l1: real(take("ifo_l1"))? };
            let standardize = take("standardize").ok_or_else(bad)?.parse().map_err(|_| bad())?;
            Some(FeatureConfig { features, ifo, standardize })
        }
        None => None,
    };
    let class_names = take("classes").map(|c| c.split(',').map(str::to_string).collect()).unwrap_or_default();
    if !kv.is_empty() {
        return Err(bad());
    }
    Ok(ModelMeta { kind, params, seed, training_digest, n_features, n_classes, features, class_names, slot })
}

fn push_section(out: &mut Vec<u8>, name: &str, bytes: &[u8]) -> Result<(), BenchError> {
    let len = u32::try_from(bytes.len()).map_err(|_| BenchError::TooLarge(name.to_string()))?;
    out.push(name.len() as u8);
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(bytes);
    out.extend_from_slice(&Sha256::digest(bytes));
    Ok(())
}

/// Serialises a trained model into artifact bytes.
pub fn save_model(model: &TrainedModel) -> Result<Vec<u8>, BenchError> {
    let mut sections: Vec<(&str, Vec<u8>)> = vec![("meta", render_meta(&model.meta)?.into_bytes())];
    if let Some(s) = &model.scaler {
        sections.push(("scaler", serde_json::to_vec(s).map_err(|_| corrupt("scaler"))?));
    }
    sections.push(("model", serde_json::to_vec(&model.body).map_err(|_| corrupt("model"))?));
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_be_bytes());
    let kind = model.meta.kind.name();
    out.push(kind.len() as u8);
    out.extend_from_slice(kind.as_bytes());
    out.extend_from_slice(&(sections.len() as u16).to_be_bytes());
    for (name, bytes) in &sections {
        push_section(&mut out, name, bytes)?;
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, section: &str) -> Result<&'a [u8], BenchError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| corrupt(section))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, section: &str) -> Result<u8, BenchError> {
        Ok(self.take(1, section)?[0])
    }

    fn u16(&mut self, section: &str) -> Result<u16, BenchError> {
        let b = self.take(2, section)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, section: &str) -> Result<u32, BenchError> {
        let b = self.take(4, section)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Reads the kind tag without decoding the sections.
pub fn peek_kind(bytes: &[u8]) -> Result<ModelKind, BenchError> {
    let mut c = header(bytes)?;
    read_kind(&mut c)
}

fn header(bytes: &[u8]) -> Result<Cursor<'_>, BenchError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(BenchError::BadMagic);
    }
    let mut c = Cursor { buf: bytes, pos: MAGIC.len() };
    let version = c.u16("header")?;
    if version != FORMAT_VERSION {
        return Err(BenchError::UnsupportedVersion(version));
    }
    Ok(c)
}

fn read_kind(c: &mut Cursor<'_>) -> Result<ModelKind, BenchError> {
    let n = c.u8("header")? as usize;
    let tag = std::str::from_utf8(c.take(n, "header")?).map_err(|_| corrupt("header"))?;
    tag.parse().map_err(|_| corrupt("header"))
}

/// Decodes artifact bytes, verifying every section digest.
pub fn load_model(bytes: &[u8]) -> Result<TrainedModel, BenchError> {
    let mut c = header(bytes)?;
    let kind = read_kind(&mut c)?;
    let count = c.u16("header")?;
    let mut sections: Vec<(String, &[u8])> = Vec::new();
    for i in 0..count {
        let label = format!("section #{i}");
        let n = c.u8(&label)? as usize;
        let name = std::str::from_utf8(c.take(n, &label)?).map_err(|_| corrupt(&label))?.to_string();
        let len = c.u32(&name)? as usize;
        let payload = c.take(len, &name)?;
        let digest = c.take(DIGEST_LEN, &name)?;
        if Sha256::digest(payload).as_slice() != digest {
            return Err(corrupt(&name));
        }
        sections.push((name, payload));
    }
    if c.pos != bytes.len() {
        return Err(corrupt("trailer"));
    }
    let order: Vec<&str> = sections.iter().map(|(n, _)| n.as_str()).collect();
    if !matches!(order.as_slice(), ["meta", "model"] | ["meta", "scaler", "model"]) {
        let odd = order.iter().find(|n| !matches!(**n, "meta" | "scaler" | "model")).copied().unwrap_or("model");
        return Err(corrupt(odd));
    }
    let text = std::str::from_utf8(sections[0].1).map_err(|_| corrupt("meta"))?;
    let meta = parse_meta(text)?;
    if meta.kind != kind {
        return Err(corrupt("meta"));
    }
    let scaler: Option<Scaler> = match sections.iter().find(|(n, _)| n == "scaler") {
        Some((_, b)) => Some(serde_json::from_slice(b).map_err(|_| corrupt("scaler"))?),
        None => None,
    };
    if scaler.as_ref().is_some_and(|s| s.means.len() != meta.n_features) {
        return Err(corrupt("scaler"));
    }
    let body: ModelBody = serde_json::from_slice(sections.last().expect("model section").1).map_err(|_| corrupt("model"))?;
    if !body_matches(kind, &body) {
        return Err(corrupt("model"));
    }
    Ok(TrainedModel { meta, scaler, body })
}

/// Human-readable summary of an artifact's metadata section.
pub fn describe(bytes: &[u8]) -> Result<String, BenchError> {
    let m = load_model(bytes)?;
    render_meta(&m.meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::models::{fit_model, ModelSpec};
    use crate::synth::blobs;

    /// Small, fast settings for every trainable kind.
    fn quick_spec(kind: ModelKind) -> ModelSpec {
        use ModelKind::*;
        let s = ModelSpec::new(kind);
        match kind {
            RfCart | RfC45 | ErtCart | ErtC45 => s.with("n_trees", 5),
            AdaBoostCart | AdaBoostC45 => s.with("n_rounds", 5).with("max_depth", 2),
            XgbGbtree | XgbDart | XgbGblinear => s.with("n_rounds", 5),
            ShallowWaves => s.with("n_trees", 5).with("n_rounds", 5),
            LogReg => s.with("epochs", 20),
            Perceptron | Mlp | Lstm | Cnn => s.with("epochs", 2),
            Lstm5 => s.with("epochs", 1).with("units", 3),
            CnnMp4 | CnnLstmMp4 | CnnMpLstm4 | DeepWaves => s.with("epochs", 1).with("units", 3).with("filters", 3),
            _ => s,
        }
    }

    fn trained(kind: ModelKind) -> TrainedModel {
        let (x, y) = blobs(8, 3, 4, 3.0, 1.0, 1);
        let mut m = fit_model(&quick_spec(kind), &x, &y, 3, 5).unwrap();
        m.meta.features = Some(FeatureConfig::default());
        m.meta.features.as_mut().unwrap().features.truncate(4);
        m.meta.class_names = vec!["Blip".into(), "Whistle".into(), "Koi_Fish".into()];
        m
    }

    #[test]
    fn every_kind_round_trips_bytewise() {
        let (probes, _) = blobs(20, 3, 4, 5.0, 3.0, 99);
        for &kind in ModelKind::ALL.iter().filter(|k| k.is_trainable()) {
            let m = trained(kind);
            let bytes = save_model(&m).unwrap();
            let back = load_model(&bytes).unwrap();
            assert_eq!(back, m, "{kind}");
            assert_eq!(save_model(&back).unwrap(), bytes, "{kind}");
            for row in probes.iter_rows() {
                assert_eq!(back.predict(row).unwrap(), m.predict(row).unwrap());
                let (a, b) = (back.predict_proba(row).unwrap(), m.predict_proba(row).unwrap());
                assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()), "{kind}");
            }
        }
    }

    #[test]
    fn derived_worker_artifacts_round_trip() {
        let sw = trained(ModelKind::ShallowWaves);
        let member = sw.shallow_member(1).unwrap();
        let back = load_model(&save_model(&member).unwrap()).unwrap();
        assert_eq!(back.meta.slot, Some(1));
        assert_eq!(back.meta.kind, ModelKind::ErtCart);
        let dw = trained(ModelKind::DeepWaves);
        let branch = dw.deep_branch(3).unwrap();
        let back = load_model(&save_model(&branch).unwrap()).unwrap();
        let row = [0.1, -0.2, 0.3, 0.4];
        assert_eq!(back.branch_embed(&row).unwrap(), branch.branch_embed(&row).unwrap());
        assert_eq!(back.branch_width(), Some(back.branch_embed(&row).unwrap().len()));
        assert!(matches!(dw.deep_branch(4), Err(BenchError::BadSlot(4))));
    }

    #[test]
    fn header_errors() {
        let bytes = save_model(&trained(ModelKind::Cart)).unwrap();
        assert!(matches!(load_model(b"GW"), Err(BenchError::BadMagic)));
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(load_model(&wrong), Err(BenchError::BadMagic)));
        let mut v2 = bytes.clone();
        v2[5] = 2;
        assert!(matches!(load_model(&v2), Err(BenchError::UnsupportedVersion(2))));
        assert_eq!(peek_kind(&bytes).unwrap(), ModelKind::Cart);
    }

    #[test]
    fn truncation_names_the_section() {
        let bytes = save_model(&trained(ModelKind::Knn)).unwrap();
        let err = load_model(&bytes[..bytes.len() - 40]).unwrap_err();
        assert!(matches!(&err, BenchError::CorruptSection(s) if s == "model"), "{err}");
        // Every strict prefix fails with a structured error.
        for cut in 0..bytes.len() {
            assert!(load_model(&bytes[..cut]).is_err());
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(load_model(&extra), Err(BenchError::CorruptSection(s)) if s == "trailer"));
    }

    #[test]
    fn flipped_payload_byte_fails_digest() {
        let bytes = save_model(&trained(ModelKind::Gnb)).unwrap();
        let text = String::from_utf8_lossy(&bytes);
        let pos = text.find("seed=").unwrap();
        let mut bad = bytes.clone();
        bad[pos + 5] ^= 1;
        assert!(matches!(load_model(&bad), Err(BenchError::CorruptSection(s)) if s == "meta"));
    }

    #[test]
    fn metadata_preamble_is_readable() {
        let text = describe(&save_model(&trained(ModelKind::RfCart)).unwrap()).unwrap();
        assert!(text.starts_with("kind=rf-cart\n"));
        assert!(text.contains("param.n_trees=5"));
        assert!(text.contains("classes=Blip,Whistle,Koi_Fish"));
        assert!(text.contains("features=GPStime,peakFreq,snr,centralFreq"));
    }
}
