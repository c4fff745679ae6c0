//! Gravity Spy glitch metadata: parsing, validation, feature encoding and
//! stratified fold assignment.
//!
//! The on-disk format is a headered comma-separated table with the columns
//! `GPStime,peakFreq,snr,centralFreq,duration,bandwidth,id,ifo,label`. Column
//! order may vary; columns are matched by exact (case-sensitive) name and any
//! extra columns are ignored.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::rng;

// ---------------------------------------------------------------------------
// Class table
// ---------------------------------------------------------------------------

/// One entry of the 22-class glitch taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassInfo {
    /// Label string as it appears in the Gravity Spy metadata files.
    pub name: &'static str,
    /// Human-readable name.
    pub display: &'static str,
    /// Reference number of O1 entries carrying this label.
    pub expected_count: usize,
}

const fn class(name: &'static str, display: &'static str, expected_count: usize) -> ClassInfo {
    ClassInfo { name, display, expected_count }
}

/// The O1 class table, in reporting order. Class indices are positions here.
pub const CLASS_TABLE: [ClassInfo; 22] = [
    class("Scattered_Light", "Scattered Light", 427),
    class("Power_Line", "Power Line", 450),
    class("1080Lines", "1080Lines", 4),
    class("1400Ripples", "1400Ripples", 83),
    class("Air_Compressor", "Air Compressor", 57),
    class("Blip", "Blip", 1763),
    class("Repeating_Blips", "Repeating Blips", 91),
    class("Violin_Mode", "Violin Mode", 137),
    class("Whistle", "Whistle", 146),
    class("Scratchy", "Scratchy", 269),
    class("Helix", "Helix", 270),
    class("Light_Modulation", "Light Modulation", 400),
    class("Low_Frequency_Burst", "Low Frequency Burst", 527),
    class("Wandering_Line", "Wandering Line", 21),
    class("Koi_Fish", "Koi Fish", 709),
    class("Low_Frequency_Lines", "Low Frequency Lines", 494),
    class("Chirp", "Chirp", 60),
    class("Extremely_Loud", "Extremely Loud", 448),
    class("Paired_Doves", "Paired Doves", 26),
    class("Tomte", "Tomte", 93),
    class("No_Glitch", "No Glitch", 41),
    class("None_of_the_Above", "None of the Above", 151),
];

pub const N_CLASSES: usize = CLASS_TABLE.len();

/// Total number of entries in the reference O1 release.
pub const O1_TOTAL: usize = 6667;

/// Index of a class in [`CLASS_TABLE`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GlitchClass(u8);

impl GlitchClass {
    pub fn from_index(index: usize) -> Option<Self> {
        (index < N_CLASSES).then_some(GlitchClass(index as u8))
    }

    /// Looks a label up by its file name (`Koi_Fish`) or display name
    /// (`Koi Fish`). Anything else is rejected.
    pub fn from_name(name: &str) -> Option<Self> {
        CLASS_TABLE
            .iter()
            .position(|c| c.name == name || c.display == name)
            .map(|i| GlitchClass(i as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn info(self) -> &'static ClassInfo {
        &CLASS_TABLE[self.index()]
    }

    pub fn name(self) -> &'static str {
        self.info().name
    }
}

impl fmt::Display for GlitchClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Label vector of the reference O1 release reconstructed from the class
/// table counts (rows grouped by class).
pub fn o1_reference_labels() -> Vec<usize> {
    CLASS_TABLE
        .iter()
        .enumerate()
        .flat_map(|(i, c)| std::iter::repeat_n(i, c.expected_count))
        .collect()
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

/// Detector that recorded the glitch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ifo {
    H1,
    L1,
}

impl Ifo {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "H1" => Some(Ifo::H1),
            "L1" => Some(Ifo::L1),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ifo::H1 => "H1",
            Ifo::L1 => "L1",
        }
    }
}

/// The eight per-glitch metadata fields.
#[derive(Debug, Clone, PartialEq)]
pub struct GlitchFeatures {
    pub gps_time: f64,
    pub peak_freq: f64,
    pub snr: f64,
    pub central_freq: f64,
    pub duration: f64,
    pub bandwidth: f64,
    pub id: String,
    pub ifo: Ifo,
}

/// One labelled metadata row.
#[derive(Debug, Clone, PartialEq)]
pub struct GlitchRecord {
    pub features: GlitchFeatures,
    pub label: GlitchClass,
}

/// A feature column of the metadata table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Feature {
    GpsTime,
    PeakFreq,
    Snr,
    CentralFreq,
    Duration,
    Bandwidth,
    Id,
    Ifo,
}

impl Feature {
    pub const ALL: [Feature; 8] = [
        Feature::GpsTime,
        Feature::PeakFreq,
        Feature::Snr,
        Feature::CentralFreq,
        Feature::Duration,
        Feature::Bandwidth,
        Feature::Id,
        Feature::Ifo,
    ];

    /// Column name in the metadata table.
    pub fn column(self) -> &'static str {
        match self {
            Feature::GpsTime => "GPStime",
            Feature::PeakFreq => "peakFreq",
            Feature::Snr => "snr",
            Feature::CentralFreq => "centralFreq",
            Feature::Duration => "duration",
            Feature::Bandwidth => "bandwidth",
            Feature::Id => "id",
            Feature::Ifo => "ifo",
        }
    }

    pub fn from_column(name: &str) -> Option<Self> {
        Feature::ALL.iter().copied().find(|f| f.column() == name)
    }
}

pub const LABEL_COLUMN: &str = "label";

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("header lacks required column `{0}`")]
    MissingColumn(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("no records to encode")]
    EmptyInput,
    #[error("invalid fold count k={k} for {n} samples")]
    InvalidK { k: usize, n: usize },
    #[error("feature configuration is empty")]
    EmptyFeatureSet,
    #[error("feature `{0}` listed twice")]
    DuplicateFeature(&'static str),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("training row index {0} out of range")]
    RowOutOfRange(usize),
}

/// Why a data row was rejected.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RowErrorKind {
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("column `{column}` is not finite: `{value}`")]
    NonFiniteValue { column: &'static str, value: String },
    #[error("column `{column}` is not a number: `{value}`")]
    BadNumber { column: &'static str, value: String },
    #[error("column `{column}` is negative: {value}")]
    NegativeValue { column: &'static str, value: f64 },
    #[error("unknown detector tag `{0}`")]
    UnknownIfo(String),
    #[error("expected {expected} fields, found {found}")]
    FieldCount { expected: usize, found: usize },
}

/// A rejected row with its 1-based line number in the input.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {kind}")]
pub struct RowError {
    pub line: u64,
    pub kind: RowErrorKind,
}

/// Non-fatal findings while parsing.
#[derive(Debug, Clone, PartialEq)]
pub enum RowWarning {
    DuplicateId { line: u64, id: String, first_line: u64 },
}

impl fmt::Display for RowWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowWarning::DuplicateId { line, id, first_line } => {
                write!(f, "line {line}: id `{id}` already used on line {first_line}")
            }
        }
    }
}

#[derive(Debug, Default)]
pub struct ParseOutcome<T> {
    pub records: Vec<T>,
    pub errors: Vec<RowError>,
    pub warnings: Vec<RowWarning>,
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

struct ColumnMap {
    features: [usize; 8],
    label: Option<usize>,
    width: usize,
}

impl ColumnMap {
    fn from_header(header: &csv::StringRecord, need_label: bool) -> Result<Self, DatasetError> {
        let find = |name: &str| header.iter().position(|h| h == name);
        let mut features = [0usize; 8];
        for (slot, f) in features.iter_mut().zip(Feature::ALL) {
            *slot = find(f.column()).ok_or_else(|| DatasetError::MissingColumn(f.column().into()))?;
        }
        let label = find(LABEL_COLUMN);
        if need_label && label.is_none() {
            return Err(DatasetError::MissingColumn(LABEL_COLUMN.into()));
        }
        Ok(ColumnMap { features, label, width: header.len() })
    }
}

fn numeric(column: &'static str, raw: &str, non_negative: bool) -> Result<f64, RowErrorKind> {
    let v: f64 = raw
        .parse()
        .map_err(|_| RowErrorKind::BadNumber { column, value: raw.to_string() })?;
    if !v.is_finite() {
        return Err(RowErrorKind::NonFiniteValue { column, value: raw.to_string() });
    }
    if non_negative && v < 0.0 {
        return Err(RowErrorKind::NegativeValue { column, value: v });
    }
    Ok(v)
}

fn parse_features(map: &ColumnMap, row: &csv::StringRecord) -> Result<GlitchFeatures, RowErrorKind> {
    if row.len() != map.width {
        return Err(RowErrorKind::FieldCount { expected: map.width, found: row.len() });
    }
    let field = |f: Feature| &row[map.features[f as usize]];
    let num = |f: Feature, nn: bool| numeric(f.column(), field(f), nn);
    let ifo_raw = field(Feature::Ifo);
    Ok(GlitchFeatures {
        gps_time: num(Feature::GpsTime, false)?,
        peak_freq: num(Feature::PeakFreq, true)?,
        snr: num(Feature::Snr, true)?,
        central_freq: num(Feature::CentralFreq, true)?,
        duration: num(Feature::Duration, true)?,
        bandwidth: num(Feature::Bandwidth, true)?,
        id: field(Feature::Id).to_string(),
        ifo: Ifo::parse(ifo_raw).ok_or_else(|| RowErrorKind::UnknownIfo(ifo_raw.to_string()))?,
    })
}

fn parse_rows<R: Read, T>(
    input: R,
    need_label: bool,
    mut build: impl FnMut(&ColumnMap, &csv::StringRecord) -> Result<(T, String), RowErrorKind>,
) -> Result<ParseOutcome<T>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = reader.headers()?.clone();
    let map = ColumnMap::from_header(&header, need_label)?;

    let mut out = ParseOutcome { records: Vec::new(), errors: Vec::new(), warnings: Vec::new() };
    let mut seen_ids: HashMap<String, u64> = HashMap::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        match build(&map, &row) {
            Ok((rec, id)) => {
                if let Some(&first_line) = seen_ids.get(&id) {
                    out.warnings.push(RowWarning::DuplicateId { line, id, first_line });
                } else {
                    seen_ids.insert(id, line);
                }
                out.records.push(rec);
            }
            Err(kind) => out.errors.push(RowError { line, kind }),
        }
    }
    Ok(out)
}

/// Parses a labelled metadata table. Malformed rows are collected in
/// [`ParseOutcome::errors`]; only header problems and I/O failures abort.
pub fn parse_csv<R: Read>(input: R) -> Result<ParseOutcome<GlitchRecord>, DatasetError> {
    parse_rows(input, true, |map, row| {
        let features = parse_features(map, row)?;
        let raw = &row[map.label.expect("label column checked")];
        let label = GlitchClass::from_name(raw).ok_or_else(|| RowErrorKind::UnknownLabel(raw.to_string()))?;
        let id = features.id.clone();
        Ok((GlitchRecord { features, label }, id))
    })
}

/// Parses a metadata table whose label column is optional (prediction input).
pub fn parse_unlabeled_csv<R: Read>(input: R) -> Result<ParseOutcome<GlitchFeatures>, DatasetError> {
    parse_rows(input, false, |map, row| {
        let f = parse_features(map, row)?;
        let id = f.id.clone();
        Ok((f, id))
    })
}

/// Writes records in the canonical column order. Floats use Rust's shortest
/// round-trip representation, so re-parsing reproduces the records exactly.
pub fn write_csv<W: Write>(records: &[GlitchRecord], out: W) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = Feature::ALL.iter().map(|f| f.column()).collect();
    header.push(LABEL_COLUMN);
    w.write_record(&header)?;
    for r in records {
        let f = &r.features;
        w.write_record([
            f.gps_time.to_string(),
            f.peak_freq.to_string(),
            f.snr.to_string(),
            f.central_freq.to_string(),
            f.duration.to_string(),
            f.bandwidth.to_string(),
            f.id.clone(),
            f.ifo.as_str().to_string(),
            r.label.name().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-class histogram of a record set compared against the reference counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassHistogram {
    pub counts: [usize; N_CLASSES],
    pub total: usize,
}

impl ClassHistogram {
    pub fn from_labels(labels: impl IntoIterator<Item = usize>) -> Self {
        let mut counts = [0usize; N_CLASSES];
        let mut total = 0;
        for l in labels {
            counts[l] += 1;
            total += 1;
        }
        ClassHistogram { counts, total }
    }

    pub fn matches_reference(&self) -> bool {
        self.total == O1_TOTAL && self.mismatches().is_empty()
    }

    /// `(class index, observed, expected)` for every class whose count
    /// differs from the reference.
    pub fn mismatches(&self) -> Vec<(usize, usize, usize)> {
        CLASS_TABLE
            .iter()
            .enumerate()
            .filter(|(i, c)| self.counts[*i] != c.expected_count)
            .map(|(i, c)| (i, self.counts[i], c.expected_count))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

/// Numeric codes used for the detector column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IfoEncoding {
    pub h1: f64,
    pub l1: f64,
}

impl Default for IfoEncoding {
    fn default() -> Self {
        IfoEncoding { h1: 0.0, l1: 1.0 }
    }
}

impl IfoEncoding {
    pub fn code(&self, ifo: Ifo) -> f64 {
        match ifo {
            Ifo::H1 => self.h1,
            Ifo::L1 => self.l1,
        }
    }
}

/// Which columns to feed the models, and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub features: Vec<Feature>,
    pub ifo: IfoEncoding,
    pub standardize: bool,
}

impl Default for FeatureConfig {
    /// Seven columns: everything except the opaque `id`.
    fn default() -> Self {
        FeatureConfig {
            features: vec![
                Feature::GpsTime,
                Feature::PeakFreq,
                Feature::Snr,
                Feature::CentralFreq,
                Feature::Duration,
                Feature::Bandwidth,
                Feature::Ifo,
            ],
            ifo: IfoEncoding::default(),
            standardize: false,
        }
    }
}

impl FeatureConfig {
    /// All eight metadata columns, `id` included (hashed, see [`id_code`]).
    pub fn paper8() -> Self {
        FeatureConfig { features: Feature::ALL.to_vec(), ..Default::default() }
    }

    /// Resolves a named preset: `default` (7 columns) or `paper8`.
    pub fn preset(name: &str) -> Result<Self, DatasetError> {
        match name {
            "default" | "default7" => Ok(Self::default()),
            "paper8" => Ok(Self::paper8()),
            other => Err(DatasetError::UnknownFeature(other.to_string())),
        }
    }

    pub fn with_standardize(mut self, on: bool) -> Self {
        self.standardize = on;
        self
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.features.is_empty() {
            return Err(DatasetError::EmptyFeatureSet);
        }
        for (i, f) in self.features.iter().enumerate() {
            if self.features[..i].contains(f) {
                return Err(DatasetError::DuplicateFeature(f.column()));
            }
        }
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.column().to_string()).collect()
    }

    /// Encodes one record into a raw (unscaled) feature row.
    pub fn encode_row(&self, f: &GlitchFeatures) -> Vec<f64> {
        self.features
            .iter()
            .map(|feat| match feat {
                Feature::GpsTime => f.gps_time,
                Feature::PeakFreq => f.peak_freq,
                Feature::Snr => f.snr,
                Feature::CentralFreq => f.central_freq,
                Feature::Duration => f.duration,
                Feature::Bandwidth => f.bandwidth,
                Feature::Id => id_code(&f.id),
                Feature::Ifo => self.ifo.code(f.ifo),
            })
            .collect()
    }
}

/// Maps an opaque identifier to a stable code in `[0, 1)` via FNV-1a.
/// The identifier text is never interpreted as a number.
pub fn id_code(id: &str) -> f64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Per-column standardisation fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Columns with zero spread; they pass through untouched.
    pub constant: Vec<bool>,
}

impl Scaler {
    /// Fits means and population standard deviations over `rows` of `x`.
    pub fn fit(x: &Matrix, rows: &[usize]) -> Result<Self, DatasetError> {
        if rows.is_empty() {
            return Err(DatasetError::EmptyInput);
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= x.rows()) {
            return Err(DatasetError::RowOutOfRange(bad));
        }
        let n = rows.len() as f64;
        let mut means = vec![0.0; x.cols()];
        let mut stds = vec![0.0; x.cols()];
        let mut constant = vec![false; x.cols()];
        for j in 0..x.cols() {
            let mean = rows.iter().map(|&r| x.get(r, j)).sum::<f64>() / n;
            let var = rows.iter().map(|&r| (x.get(r, j) - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd <= 1e-12 * (1.0 + mean.abs()) {
                warn!("column {j} is constant over the training rows; passing it through unscaled");
                constant[j] = true;
                means[j] = 0.0;
                stds[j] = 1.0;
            } else {
                means[j] = mean;
                stds[j] = sd;
            }
        }
        Ok(Scaler { means, stds, constant })
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn transform_row_in_place(&self, row: &mut [f64]) {
        for (v, (m, s)) in row.iter_mut().zip(self.means.iter().zip(&self.stds)) {
            *v = (*v - m) / s;
        }
    }

    pub fn transform(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for i in 0..out.rows() {
            self.transform_row_in_place(out.row_mut(i));
        }
        out
    }
}

/// Encoded design matrix plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub x: Matrix,
    pub labels: Vec<usize>,
    pub feature_names: Vec<String>,
    pub scaler: Option<Scaler>,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.x.rows()
    }

    pub fn cols(&self) -> usize {
        self.x.cols()
    }
}

/// Encodes records into a design matrix in `cfg` column order.
///
/// With `cfg.standardize`, the scaler is fitted on `train_rows` (all rows
/// when `None`) and then applied to every row.
pub fn encode(
    records: &[GlitchRecord],
    cfg: &FeatureConfig,
    train_rows: Option<&[usize]>,
) -> Result<FeatureMatrix, DatasetError> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(DatasetError::EmptyInput);
    }
    let rows: Vec<Vec<f64>> = records.iter().map(|r| cfg.encode_row(&r.features)).collect();
    let mut x = Matrix::from_rows(&rows);
    let labels = records.iter().map(|r| r.label.index()).collect();
    let scaler = if cfg.standardize {
        let all: Vec<usize>;
        let fit_rows = match train_rows {
            Some(r) => r,
            None => {
                all = (0..x.rows()).collect();
                &all
            }
        };
        let s = Scaler::fit(&x, fit_rows)?;
        x = s.transform(&x);
        Some(s)
    } else {
        None
    };
    Ok(FeatureMatrix { x, labels, feature_names: cfg.names(), scaler })
}

// ---------------------------------------------------------------------------
// Stratified folds
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of: Vec<usize>,
    pub seed: u64,
}

impl FoldAssignment {
    /// `(train rows, test rows)` for fold `fold`, both ascending.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::with_capacity(self.fold_of.len());
        let mut test = Vec::new();
        for (i, &f) in self.fold_of.iter().enumerate() {
            if f == fold {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Stratified k-fold assignment: members of each class are shuffled and dealt
/// round-robin over the folds. The dealing position carries over from one
/// class to the next (starting at a seeded offset) so fold sizes stay within
/// one of each other overall.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<FoldAssignment, DatasetError> {
    let n = labels.len();
    if k < 2 || k > n {
        return Err(DatasetError::InvalidK { k, n });
    }
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    let mut rng = rng::seeded(seed);
    let mut next = rng.gen_range(0..k);
    let mut fold_of = vec![0; n];
    for class_rows in members.iter_mut() {
        class_rows.shuffle(&mut rng);
        for &row in class_rows.iter() {
            fold_of[row] = next;
            next = (next + 1) % k;
        }
    }
    Ok(FoldAssignment { k, fold_of, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "GPStime,peakFreq,snr,centralFreq,duration,bandwidth,id,ifo,label\n";

    fn record(gps: f64, ifo: Ifo, label: usize) -> GlitchRecord {
        GlitchRecord {
            features: GlitchFeatures {
                gps_time: gps,
                peak_freq: 100.0,
                snr: 12.5,
                central_freq: 300.0,
                duration: 0.5,
                bandwidth: 50.0,
                id: format!("id{gps}"),
                ifo,
            },
            label: GlitchClass::from_index(label).unwrap(),
        }
    }

    #[test]
    fn class_table_sums_to_o1_total() {
        assert_eq!(CLASS_TABLE.iter().map(|c| c.expected_count).sum::<usize>(), O1_TOTAL);
        assert_eq!(GlitchClass::from_name("Blip").unwrap().info().expected_count, 1763);
        assert_eq!(GlitchClass::from_name("1080Lines").unwrap().info().expected_count, 4);
        assert_eq!(GlitchClass::from_name("Koi Fish"), GlitchClass::from_name("Koi_Fish"));
    }

    #[test]
    fn header_only_yields_nothing() {
        let out = parse_csv(HEADER.as_bytes()).unwrap();
        assert!(out.records.is_empty());
        assert!(out.errors.is_empty());
    }

    #[test]
    fn misspelled_label_is_reported_with_line() {
        let text = format!("{HEADER}1.0,2,3,4,0.5,6,a,H1,Blip\n1.0,2,3,4,0.5,6,b,L1,Blips\n");
        let out = parse_csv(text.as_bytes()).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(
            out.errors,
            vec![RowError { line: 3, kind: RowErrorKind::UnknownLabel("Blips".into()) }]
        );
    }

    #[test]
    fn missing_column_is_fatal() {
        let text = "GPStime,peakFreq,snr,centralFreq,duration,bandwidth,id,label\n";
        match parse_csv(text.as_bytes()) {
            Err(DatasetError::MissingColumn(c)) => assert_eq!(c, "ifo"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn columns_matched_by_name_in_any_order() {
        let text = "label,ifo,id,bandwidth,duration,centralFreq,snr,peakFreq,GPStime,extra\n\
                    Chirp,L1,x1,6,5,4,3,2,1,zzz\n";
        let out = parse_csv(text.as_bytes()).unwrap();
        let f = &out.records[0].features;
        assert_eq!((f.gps_time, f.peak_freq, f.snr, f.bandwidth), (1.0, 2.0, 3.0, 6.0));
        assert_eq!(f.ifo, Ifo::L1);
        assert_eq!(out.records[0].label.name(), "Chirp");
    }

    #[test]
    fn bad_values_and_duplicate_ids() {
        let text = format!(
            "{HEADER}1,inf,3,4,5,6,a,H1,Blip\n1,2,-3,4,5,6,b,H1,Blip\n1,2,3,4,5,6,c,V1,Blip\n\
             1,2,3,4,5,6,d,H1,Blip\n1,2,3,4,5,6,d,H1,Tomte\n1,2,x,4,5,6,e,H1,Blip\n"
        );
        let out = parse_csv(text.as_bytes()).unwrap();
        assert_eq!(out.records.len(), 2);
        let kinds: Vec<_> = out.errors.iter().map(|e| e.kind.clone()).collect();
        assert!(matches!(kinds[0], RowErrorKind::NonFiniteValue { column: "peakFreq", .. }));
        assert!(matches!(kinds[1], RowErrorKind::NegativeValue { column: "snr", .. }));
        assert!(matches!(kinds[2], RowErrorKind::UnknownIfo(_)));
        assert!(matches!(kinds[3], RowErrorKind::BadNumber { column: "snr", .. }));
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn one_record_default_encoding() {
        let m = encode(&[record(5.0, Ifo::H1, 0)], &FeatureConfig::default(), None).unwrap();
        assert_eq!(m.cols(), 7);
        assert_eq!(m.x.row(0), &[5.0, 100.0, 12.5, 300.0, 0.5, 50.0, 0.0]);
        assert_eq!(m.labels, vec![0]);
    }

    #[test]
    fn identical_records_pass_through_under_standardisation() {
        let recs = vec![record(5.0, Ifo::L1, 0), record(5.0, Ifo::L1, 0)];
        let cfg = FeatureConfig::default().with_standardize(true);
        let m = encode(&recs, &cfg, None).unwrap();
        let scaler = m.scaler.as_ref().unwrap();
        assert!(scaler.constant.iter().all(|&c| c));
        assert_eq!(m.x.row(0), &[5.0, 100.0, 12.5, 300.0, 0.5, 50.0, 1.0]);
        assert_eq!(m.x.row(0), m.x.row(1));
    }

    #[test]
    fn standardised_moments_recomputed() {
        let mut r = rng::seeded(3);
        let recs: Vec<_> = (0..10)
            .map(|i| {
                let mut rec = record(1e9 + r.gen::<f64>() * 1e6, if i % 2 == 0 { Ifo::H1 } else { Ifo::L1 }, 1);
                rec.features.snr = r.gen::<f64>() * 100.0;
                rec.features.peak_freq = r.gen::<f64>() * 2000.0;
                rec.features.central_freq = r.gen::<f64>() * 2000.0;
                rec.features.duration = r.gen::<f64>();
                rec.features.bandwidth = r.gen::<f64>() * 500.0;
                rec
            })
            .collect();
        let m = encode(&recs, &FeatureConfig::default().with_standardize(true), None).unwrap();
        for j in 0..m.cols() {
            let col = m.x.column(j);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
            assert!(mean.abs() < 1e-9, "col {j} mean {mean}");
            assert!((sd - 1.0).abs() < 1e-9, "col {j} sd {sd}");
        }
    }

    #[test]
    fn paper8_includes_hashed_id() {
        let cfg = FeatureConfig::paper8();
        assert_eq!(cfg.features.len(), 8);
        let row = cfg.encode_row(&record(1.0, Ifo::H1, 0).features);
        assert!((0.0..1.0).contains(&row[6]));
        // A numeric-looking id is hashed, not parsed.
        assert_ne!(id_code("12345"), 12345.0);
    }

    #[test]
    fn feature_config_rejects_duplicates() {
        let cfg = FeatureConfig { features: vec![Feature::Snr, Feature::Snr], ..Default::default() };
        assert!(matches!(cfg.validate(), Err(DatasetError::DuplicateFeature("snr"))));
        let empty = FeatureConfig { features: vec![], ..Default::default() };
        assert!(matches!(empty.validate(), Err(DatasetError::EmptyFeatureSet)));
    }

    #[test]
    fn kfold_rejects_bad_k() {
        assert!(matches!(stratified_kfold(&[0, 1, 0], 1, 0), Err(DatasetError::InvalidK { k: 1, .. })));
        assert!(matches!(stratified_kfold(&[0, 1, 0], 4, 0), Err(DatasetError::InvalidK { k: 4, .. })));
    }

    #[test]
    fn o1_folds_blip_and_1080lines() {
        let labels = o1_reference_labels();
        let folds = stratified_kfold(&labels, 10, 7).unwrap();
        let per_fold = |class: usize| {
            let mut c = vec![0usize; 10];
            for (i, &l) in labels.iter().enumerate() {
                if l == class {
                    c[folds.fold_of[i]] += 1;
                }
            }
            c
        };
        let blip = per_fold(5);
        assert!(blip.iter().all(|&c| c == 176 || c == 177));
        assert_eq!(blip.iter().filter(|&&c| c == 177).count(), 3);
        let lines = per_fold(2);
        assert_eq!(lines.iter().filter(|&&c| c == 1).count(), 4);
        assert_eq!(lines.iter().filter(|&&c| c == 0).count(), 6);
        let sizes = folds.fold_sizes();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn kfold_seed_changes_assignment() {
        let labels: Vec<usize> = (0..100).map(|i| i % 3).collect();
        let a = stratified_kfold(&labels, 5, 1).unwrap();
        let b = stratified_kfold(&labels, 5, 2).unwrap();
        assert_eq!(a, stratified_kfold(&labels, 5, 1).unwrap());
        assert_ne!(a.fold_of, b.fold_of);
    }
}
