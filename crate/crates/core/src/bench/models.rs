//! Registry of benchmarkable model kinds: hyperparameter parsing, fitting
//! and prediction behind one [`TrainedModel`] type.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::baselines::{self, BaselineKind, BaselineModel, BaselineParams};
use crate::dataset::{FeatureConfig, Scaler};
use crate::deepwaves::{single_branch_spec, DeepWavesModel, DeepWavesWidths, TrainMode, N_BRANCHES};
use crate::ensemble::{self, ShallowWavesModel, ShallowWavesParams};
use crate::forests::{
    self, AdaBoostModel, AdaBoostParams, BoostParams, BoostedModel, Booster, ForestModel, ForestParams,
};
use crate::matrix::Matrix;
use crate::nnet::{self, zoo, NetworkSpec, NetworkState, TrainConfig};
use crate::rng::derive_seed;
use crate::trees::{self, Criterion, MaxFeatures, TreeModel, TreeParams};

/// Named hyperparameter overrides; anything absent takes the kind's default.
pub type HyperParams = BTreeMap<String, String>;

macro_rules! model_kinds {
    ($($variant:ident => $name:literal, $display:literal;)*) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum ModelKind { $($variant),* }

        impl ModelKind {
            pub const ALL: &'static [ModelKind] = &[$(ModelKind::$variant),*];

            /// Command-line / artifact tag.
            pub fn name(self) -> &'static str {
                match self { $(ModelKind::$variant => $name),* }
            }

            /// Row label in result tables.
            pub fn display(self) -> &'static str {
                match self { $(ModelKind::$variant => $display),* }
            }
        }
    };
}

model_kinds! {
    Majority => "majority", "Majority (dummy)";
    Knn => "knn", "KNN";
    Gnb => "gnb", "GNB";
    LogReg => "logreg", "LogReg";
    Cart => "cart", "CART";
    C45 => "c45", "C4.5";
    AdaBoostCart => "adaboost-cart", "AdaBoost CART";
    AdaBoostC45 => "adaboost-c45", "AdaBoost C4.5";
    RfCart => "rf-cart", "RF CART";
    RfC45 => "rf-c45", "RF C4.5";
    ErtCart => "ert-cart", "ERT CART";
    ErtC45 => "ert-c45", "ERT C4.5";
    XgbGbtree => "xgb-gbtree", "XGBoost-gbtree";
    XgbGblinear => "xgb-gblinear", "XGBoost-gblinear";
    XgbDart => "xgb-dart", "XGBoost-dart";
    ShallowWaves => "shallowwaves", "ShallowWaves Ensemble";
    Perceptron => "perceptron", "Perceptron";
    Mlp => "mlp", "MLP";
    Dbn => "dbn", "DBN";
    Lstm => "lstm", "LSTM";
    Cnn => "cnn", "CNN";
    Lstm5 => "lstm5", "5 x LSTM";
    CnnMp4 => "cnn-mp-x4", "4 x (CNN + MP)";
    CnnLstmMp4 => "cnn-lstm-mp-x4", "4 x (CNN + LSTM + MP)";
    CnnMpLstm4 => "cnn-mp-lstm-x4", "4 x (CNN + MP + LSTM)";
    DeepWaves => "deepwaves", "DeepWaves Ensemble";
    DeepBranch => "deepwaves-branch", "DeepWaves branch";
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self, BenchError> {
        ModelKind::ALL.iter().copied().find(|k| k.name() == s).ok_or_else(|| BenchError::UnknownModel(s.to_string()))
    }
}

/// Which results table a kind belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    Classical,
    Deep,
}

impl ModelKind {
    pub fn family(self) -> Family {
        use ModelKind::*;
        match self {
            Perceptron | Mlp | Dbn | Lstm | Cnn | Lstm5 | CnnMp4 | CnnLstmMp4 | CnnMpLstm4 | DeepWaves | DeepBranch => {
                Family::Deep
            }
            _ => Family::Classical,
        }
    }

    /// Kinds that can be fitted by [`fit_model`] (everything but the DBN
    /// placeholder and the worker-only branch artifact).
    pub fn is_trainable(self) -> bool {
        !matches!(self, ModelKind::Dbn | ModelKind::DeepBranch)
    }

    /// Gradient-trained and distance-based kinds see standardised inputs;
    /// tree kinds and naive Bayes are scale-invariant and see raw inputs.
    pub fn standardizes(self) -> bool {
        matches!(self, ModelKind::Knn | ModelKind::LogReg) || self.family() == Family::Deep
    }

    /// Recognised hyperparameters with their defaults.
    pub fn param_defaults(self) -> &'static [(&'static str, &'static str)] {
        use ModelKind::*;
        match self {
            Majority | Dbn | DeepBranch => &[],
            Knn => &[("k", "5")],
            Gnb => &[("var_smoothing", "1e-9")],
            LogReg => &[("lr", "0.1"), ("epochs", "200"), ("l2", "0.0001")],
            Cart | C45 => &[("max_depth", "none"), ("min_samples_split", "2")],
            AdaBoostCart | AdaBoostC45 => &[("n_rounds", "50"), ("max_depth", "none"), ("min_samples_split", "2")],
            RfCart | RfC45 | ErtCart | ErtC45 => {
                &[("n_trees", "100"), ("max_depth", "none"), ("max_features", "sqrt"), ("min_samples_split", "2")]
            }
            XgbGbtree => &[("n_rounds", "100"), ("learning_rate", "0.1"), ("max_depth", "3"), ("l2", "0")],
            XgbDart => &[
                ("n_rounds", "100"),
                ("learning_rate", "0.1"),
                ("max_depth", "3"),
                ("l2", "0"),
                ("drop_prob", "0.1"),
            ],
            XgbGblinear => &[("n_rounds", "100"), ("learning_rate", "0.1"), ("l2", "0")],
            ShallowWaves => &[("n_trees", "100"), ("n_rounds", "100"), ("learning_rate", "0.1"), ("max_depth", "3")],
            Perceptron => &[("epochs", "30"), ("batch_size", "32"), ("lr", "0.001")],
            Lstm | Lstm5 => &[("epochs", "30"), ("batch_size", "32"), ("lr", "0.001"), ("units", "16")],
            Mlp => &[("epochs", "30"), ("batch_size", "32"), ("lr", "0.001"), ("alternate_softmax", "false")],
            Cnn => &[("epochs", "30"), ("batch_size", "32"), ("lr", "0.001"), ("filters", "16"), ("kernel", "3")],
            CnnMp4 | CnnLstmMp4 | CnnMpLstm4 => &[
                ("epochs", "30"),
                ("batch_size", "32"),
                ("lr", "0.001"),
                ("filters", "16"),
                ("kernel", "3"),
                ("units", "16"),
            ],
            DeepWaves => &[
                ("epochs", "30"),
                ("batch_size", "32"),
                ("lr", "0.001"),
                ("filters", "16"),
                ("kernel", "3"),
                ("units", "16"),
                ("mode", "joint"),
            ],
        }
    }

    /// Branch index of the single-branch kinds within DeepWaves.
    fn branch_index(self) -> Option<usize> {
        match self {
            ModelKind::CnnMp4 => Some(0),
            ModelKind::CnnMpLstm4 => Some(1),
            ModelKind::CnnLstmMp4 => Some(2),
            _ => None,
        }
    }
}

/// A model kind plus hyperparameter overrides.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub params: HyperParams,
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        ModelSpec { kind, params: HyperParams::new() }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }

    /// True when no hyperparameter was overridden.
    pub fn is_default(&self) -> bool {
        self.params.is_empty()
    }

    /// Every recognised hyperparameter with overrides applied.
    pub fn resolved(&self) -> HyperParams {
        let mut all: HyperParams =
            self.kind.param_defaults().iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        all.extend(self.params.clone());
        all
    }

    /// Rejects unknown keys and unparsable values without fitting anything.
    pub fn validate(&self) -> Result<(), BenchError> {
        let mut r = ParamReader::new(self)?;
        match self.kind {
            ModelKind::Dbn => return Err(BenchError::NotImplemented(self.kind.display())),
            ModelKind::DeepBranch => return Err(BenchError::NotTrainable(self.kind.name())),
            _ => {}
        }
        for (key, _) in self.kind.param_defaults() {
            r.value(key)?;
        }
        Ok(())
    }
}

impl fmt::Display for ModelSpec {
    /// `kind` or `kind(key=value,...)`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind.name())?;
        if !self.params.is_empty() {
            let inner: Vec<String> = self.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
            write!(f, "({})", inner.join(","))?;
        }
        Ok(())
    }
}

impl std::str::FromStr for ModelSpec {
    type Err = BenchError;
    /// Parses the [`fmt::Display`] form.
    fn from_str(s: &str) -> Result<Self, BenchError> {
        let s = s.trim();
        let (kind, rest) = match s.find('(') {
            Some(i) if s.ends_with(')') => (&s[..i], &s[i + 1..s.len() - 1]),
            Some(_) => return Err(BenchError::BadParam { key: s.to_string(), value: String::new(), reason: "unbalanced parentheses" }),
            None => (s, ""),
        };
        let mut spec = ModelSpec::new(kind.trim().parse()?);
        for pair in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = pair.split_once('=').ok_or_else(|| BenchError::BadParam {
                key: pair.to_string(),
                value: String::new(),
                reason: "expected key=value",
            })?;
            spec.params.insert(k.trim().to_string(), v.trim().to_string());
        }
        spec.validate().or_else(|e| match e {
            BenchError::NotImplemented(_) => Ok(()),
            e => Err(e),
        })?;
        Ok(spec)
    }
}

/// Parses a comma-separated list of specs. Commas inside parentheses belong
/// to a spec; `all`, `classical` and `deep` expand to every trainable kind
/// (with the DBN placeholder) of that family.
pub fn parse_model_list(s: &str) -> Result<Vec<ModelSpec>, BenchError> {
    let mut items = Vec::new();
    let (mut depth, mut start) = (0i32, 0);
    for (i, ch) in s.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                items.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    items.push(&s[start..]);
    let mut specs = Vec::new();
    for item in items.into_iter().map(str::trim).filter(|i| !i.is_empty()) {
        let family = match item {
            "all" => None,
            "classical" => Some(Family::Classical),
            "deep" => Some(Family::Deep),
            _ => {
                specs.push(item.parse()?);
                continue;
            }
        };
        specs.extend(
            ModelKind::ALL
                .iter()
                .filter(|k| **k != ModelKind::DeepBranch && family.is_none_or(|f| k.family() == f))
                .map(|&k| ModelSpec::new(k)),
        );
    }
    if specs.is_empty() {
        return Err(BenchError::EmptyModelList);
    }
    Ok(specs)
}

/// Typed access to a spec's hyperparameters with defaults filled in.
struct ParamReader {
    values: HyperParams,
}

impl ParamReader {
    fn new(spec: &ModelSpec) -> Result<Self, BenchError> {
        let known: BTreeSet<&str> = spec.kind.param_defaults().iter().map(|(k, _)| *k).collect();
        if let Some(k) = spec.params.keys().find(|k| !known.contains(k.as_str())) {
            return Err(BenchError::UnknownParam { kind: spec.kind.name(), key: k.clone() });
        }
        if let Some((k, v)) = spec.params.iter().find(|(_, v)| v.contains(['\n', '\r', ',', '(', ')']) || v.is_empty()) {
            return Err(BenchError::BadParam { key: k.clone(), value: v.clone(), reason: "empty or contains a reserved character" });
        }
        Ok(ParamReader { values: spec.resolved() })
    }

    fn value(&mut self, key: &str) -> Result<ParamValue, BenchError> {
        let raw = self.values.get(key).cloned().unwrap_or_default();
        let bad = |reason| BenchError::BadParam { key: key.to_string(), value: raw.clone(), reason };
        Ok(match key {
            "max_depth" => ParamValue::OptUsize(if raw == "none" {
                None
            } else {
                Some(raw.parse::<usize>().ok().filter(|&d| d >= 1).ok_or_else(|| bad("expected a positive integer or `none`"))?)
            }),
            "max_features" => ParamValue::MaxFeatures(match raw.as_str() {
                "sqrt" => MaxFeatures::Sqrt,
                "all" => MaxFeatures::All,
                n => MaxFeatures::Count(n.parse::<usize>().ok().filter(|&m| m >= 1).ok_or_else(|| bad("expected sqrt, all or a positive integer"))?),
            }),
            "mode" => ParamValue::Mode(match raw.as_str() {
                "joint" => TrainMode::Joint,
                "stacked" => TrainMode::SeparateThenStack,
                _ => return Err(bad("expected joint or stacked")),
            }),
            "alternate_softmax" => ParamValue::Bool(raw.parse().map_err(|_| bad("expected true or false"))?),
            "lr" | "learning_rate" | "l2" | "var_smoothing" | "drop_prob" => {
                let v: f64 = raw.parse().map_err(|_| bad("expected a number"))?;
                if !(v.is_finite() && v >= 0.0) {
                    return Err(bad("expected a finite non-negative number"));
                }
                ParamValue::F64(v)
            }
            _ => {
                let v: usize = raw.parse().map_err(|_| bad("expected a non-negative integer"))?;
                if v == 0 && key != "epochs" {
                    return Err(bad("must be at least 1"));
                }
                ParamValue::Usize(v)
            }
        })
    }

    fn usize(&mut self, key: &str) -> Result<usize, BenchError> {
        match self.value(key)? {
            ParamValue::Usize(v) => Ok(v),
            _ => unreachable!("`{key}` is not an integer parameter"),
        }
    }

    fn f64(&mut self, key: &str) -> Result<f64, BenchError> {
        match self.value(key)? {
            ParamValue::F64(v) => Ok(v),
            _ => unreachable!("`{key}` is not a real parameter"),
        }
    }

    fn max_depth(&mut self) -> Result<Option<usize>, BenchError> {
        match self.value("max_depth")? {
            ParamValue::OptUsize(v) => Ok(v),
            _ => unreachable!(),
        }
    }
}

enum ParamValue {
    Usize(usize),
    OptUsize(Option<usize>),
    F64(f64),
    Bool(bool),
    MaxFeatures(MaxFeatures),
    Mode(TrainMode),
}

/// Provenance and shape information carried with every trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMeta {
    pub kind: ModelKind,
    /// Fully resolved hyperparameters.
    pub params: HyperParams,
    pub seed: u64,
    /// Hex SHA-256 of the training matrix and labels.
    pub training_digest: String,
    pub n_features: usize,
    pub n_classes: usize,
    /// How raw records map to model input columns, when known.
    pub features: Option<FeatureConfig>,
    pub class_names: Vec<String>,
    /// Ensemble slot (member or branch index) for worker artifacts.
    pub slot: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelBody {
    Majority { priors: Vec<f64> },
    Baseline(BaselineModel),
    Tree(TreeModel),
    AdaBoost(AdaBoostModel),
    Forest(ForestModel),
    Boosted(BoostedModel),
    ShallowWaves(ShallowWavesModel),
    Network(NetworkState),
    DeepWaves(DeepWavesModel),
    DeepBranch { model: DeepWavesModel, branch: usize },
}

/// A fitted model together with its input scaler and metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub meta: ModelMeta,
    pub scaler: Option<Scaler>,
    pub body: ModelBody,
}

/// Hex SHA-256 over the little-endian bytes of `x` followed by the labels.
pub fn training_digest(x: &Matrix, labels: &[usize]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update((x.rows() as u64).to_le_bytes());
    h.update((x.cols() as u64).to_le_bytes());
    for v in x.data() {
        h.update(v.to_le_bytes());
    }
    for &l in labels {
        h.update((l as u64).to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn tree_params(r: &mut ParamReader, criterion: Criterion, seed: u64) -> Result<TreeParams, BenchError> {
    Ok(TreeParams {
        criterion,
        max_depth: r.max_depth()?,
        min_samples_split: r.usize("min_samples_split")?.max(2),
        seed,
        ..TreeParams::default()
    })
}

fn forest_params(r: &mut ParamReader, base: ForestParams, seed: u64) -> Result<ForestParams, BenchError> {
    let max_features = match r.value("max_features")? {
        ParamValue::MaxFeatures(m) => m,
        _ => unreachable!(),
    };
    Ok(ForestParams {
        n_trees: r.usize("n_trees")?,
        tree: TreeParams { max_depth: r.max_depth()?, min_samples_split: r.usize("min_samples_split")?.max(2), max_features, ..base.tree },
        seed,
        ..base
    })
}

fn boost_params(r: &mut ParamReader, booster: Booster, seed: u64) -> Result<BoostParams, BenchError> {
    let mut p = BoostParams::new(booster);
    p.n_rounds = r.usize("n_rounds")?;
    p.learning_rate = r.f64("learning_rate")?;
    p.l2 = r.f64("l2")?;
    if booster != Booster::GbLinear {
        p.tree.max_depth = r.max_depth()?;
    }
    if booster == Booster::Dart {
        p.dart_drop_prob = r.f64("drop_prob")?;
    }
    p.seed = seed;
    Ok(p)
}

fn train_config(r: &mut ParamReader, seed: u64) -> Result<TrainConfig, BenchError> {
    Ok(TrainConfig {
        epochs: r.usize("epochs")?,
        batch_size: r.usize("batch_size")?,
        learning_rate: r.f64("lr")?,
        seed,
        ..TrainConfig::default()
    })
}

fn widths(r: &mut ParamReader) -> Result<DeepWavesWidths, BenchError> {
    Ok(DeepWavesWidths { filters: r.usize("filters")?, kernel: r.usize("kernel")?, units: r.usize("units")? })
}

fn fit_network(spec: NetworkSpec, x: &Matrix, labels: &[usize], cfg: &TrainConfig, seed: u64) -> Result<ModelBody, BenchError> {
    let init = NetworkState::init(spec, derive_seed(seed, 1))?;
    let (state, _) = nnet::train(init, x, labels, cfg)?;
    Ok(ModelBody::Network(state))
}

/// Fits `spec` on raw (unscaled) training rows. When the kind standardises
/// its inputs the scaler is fitted here, on these rows only.
pub fn fit_model(spec: &ModelSpec, x: &Matrix, labels: &[usize], n_classes: usize, seed: u64) -> Result<TrainedModel, BenchError> {
    spec.validate()?;
    if x.rows() == 0 {
        return Err(BenchError::EmptyTrainingSet);
    }
    if labels.len() != x.rows() {
        return Err(BenchError::LengthMismatch { rows: x.rows(), labels: labels.len() });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(BenchError::LabelOutOfRange { label, n_classes });
    }
    let mut r = ParamReader::new(spec)?;
    let scaler = if spec.kind.standardizes() {
        let rows: Vec<usize> = (0..x.rows()).collect();
        Some(Scaler::fit(x, &rows)?)
    } else {
        None
    };
    let scaled;
    let xs = match &scaler {
        Some(s) => {
            scaled = s.transform(x);
            &scaled
        }
        None => x,
    };
    use ModelKind::*;
    let baseline = |p: BaselineParams| -> Result<ModelBody, BenchError> {
        Ok(ModelBody::Baseline(baselines::fit_baseline(xs, labels, n_classes, &p)?))
    };
    let body = match spec.kind {
        Majority => {
            let mut priors = vec![0.0; n_classes];
            for &l in labels {
                priors[l] += 1.0;
            }
            let n = labels.len() as f64;
            priors.iter_mut().for_each(|p| *p /= n);
            ModelBody::Majority { priors }
        }
        Knn => baseline(BaselineParams { knn_k: r.usize("k")?, ..BaselineParams::new(BaselineKind::Knn) })?,
        Gnb => baseline(BaselineParams { var_smoothing: r.f64("var_smoothing")?, ..BaselineParams::new(BaselineKind::Gnb) })?,
        LogReg => baseline(BaselineParams {
            logreg_lr: r.f64("lr")?,
            logreg_epochs: r.usize("epochs")?,
            logreg_l2: r.f64("l2")?,
            ..BaselineParams::new(BaselineKind::LogReg)
        })?,
        Cart | C45 => {
            let criterion = if spec.kind == Cart { Criterion::Gini } else { Criterion::Entropy };
            ModelBody::Tree(trees::fit_tree(xs, labels, n_classes, &tree_params(&mut r, criterion, seed)?)?)
        }
        AdaBoostCart | AdaBoostC45 => {
            let criterion = if spec.kind == AdaBoostCart { Criterion::Gini } else { Criterion::Entropy };
            let p = AdaBoostParams { n_rounds: r.usize("n_rounds")?, tree: tree_params(&mut r, criterion, 0)?, seed };
            ModelBody::AdaBoost(forests::fit_adaboost(xs, labels, n_classes, &p)?)
        }
        RfCart | RfC45 | ErtCart | ErtC45 => {
            let base = match spec.kind {
                RfCart => ForestParams::rf(Criterion::Gini),
                RfC45 => ForestParams::rf(Criterion::Entropy),
                ErtCart => ForestParams::ert(Criterion::Gini),
                _ => ForestParams::ert(Criterion::Entropy),
            };
            ModelBody::Forest(forests::fit_forest(xs, labels, n_classes, &forest_params(&mut r, base, seed)?)?)
        }
        XgbGbtree | XgbGblinear | XgbDart => {
            let booster = match spec.kind {
                XgbGbtree => Booster::GbTree,
                XgbGblinear => Booster::GbLinear,
                _ => Booster::Dart,
            };
            ModelBody::Boosted(forests::fit_boosted(xs, labels, n_classes, &boost_params(&mut r, booster, seed)?)?)
        }
        ShallowWaves => {
            let mut p = ShallowWavesParams { seed, ..ShallowWavesParams::default() };
            let n_trees = r.usize("n_trees")?;
            p.rf.n_trees = n_trees;
            p.ert.n_trees = n_trees;
            p.xgb.n_rounds = r.usize("n_rounds")?;
            p.xgb.learning_rate = r.f64("learning_rate")?;
            p.xgb.tree.max_depth = r.max_depth()?;
            ModelBody::ShallowWaves(ensemble::fit_shallowwaves(xs, labels, n_classes, &p)?)
        }
        Perceptron | Mlp | Lstm | Cnn | Lstm5 | CnnMp4 | CnnLstmMp4 | CnnMpLstm4 => {
            let d = x.cols();
            let net = match spec.kind {
                Perceptron => zoo::perceptron(d, n_classes),
                Mlp => {
                    let alt = matches!(r.value("alternate_softmax")?, ParamValue::Bool(true));
                    zoo::mlp(d, n_classes, alt)
                }
                Lstm => zoo::lstm(d, n_classes, r.usize("units")?),
                Lstm5 => zoo::lstm5(d, n_classes, r.usize("units")?),
                Cnn => zoo::cnn(d, n_classes, r.usize("filters")?, r.usize("kernel")?),
                k => single_branch_spec(k.branch_index().expect("branch kind"), d, n_classes, &widths(&mut r)?),
            };
            let cfg = train_config(&mut r, derive_seed(seed, 2))?;
            fit_network(net, xs, labels, &cfg, seed)?
        }
        DeepWaves => {
            let mode = match r.value("mode")? {
                ParamValue::Mode(m) => m,
                _ => unreachable!(),
            };
            let init = DeepWavesModel::init(x.cols(), n_classes, &widths(&mut r)?, derive_seed(seed, 1))?;
            let cfg = train_config(&mut r, derive_seed(seed, 2))?;
            ModelBody::DeepWaves(init.train(xs, labels, &cfg, mode)?.0)
        }
        Dbn => return Err(BenchError::NotImplemented(Dbn.display())),
        DeepBranch => return Err(BenchError::NotTrainable(DeepBranch.name())),
    };
    Ok(TrainedModel {
        meta: ModelMeta {
            kind: spec.kind,
            params: spec.resolved(),
            seed,
            training_digest: training_digest(x, labels),
            n_features: x.cols(),
            n_classes,
            features: None,
            class_names: Vec::new(),
            slot: None,
        },
        scaler,
        body,
    })
}

impl TrainedModel {
    fn prepare(&self, row: &[f64]) -> Result<Vec<f64>, BenchError> {
        if row.len() != self.meta.n_features {
            return Err(BenchError::WidthMismatch { expected: self.meta.n_features, found: row.len() });
        }
        if let Some(bad) = row.iter().find(|v| !v.is_finite()) {
            return Err(BenchError::NonFiniteInput(*bad));
        }
        Ok(match &self.scaler {
            Some(s) => s.transform_row(row),
            None => row.to_vec(),
        })
    }

    /// Class scores for a raw row. For ShallowWaves these are the mean
    /// member probabilities; the class decision is the hard vote.
    pub fn predict_proba(&self, row: &[f64]) -> Result<Vec<f64>, BenchError> {
        let row = self.prepare(row)?;
        Ok(match &self.body {
            ModelBody::Majority { priors } => priors.clone(),
            ModelBody::Baseline(m) => baselines::predict_baseline(m, &row)?,
            ModelBody::Tree(m) => trees::predict_proba_tree(m, &row)?,
            ModelBody::AdaBoost(m) => m.predict_proba(&row)?,
            ModelBody::Forest(m) => forests::predict_forest(m, &row)?,
            ModelBody::Boosted(m) => forests::predict_boosted(m, &row)?,
            ModelBody::ShallowWaves(m) => ensemble::predict_hard_vote(m, &row)?.mean_probs,
            ModelBody::Network(s) => s.predict(&row)?,
            ModelBody::DeepWaves(m) => m.predict(&row)?,
            ModelBody::DeepBranch { .. } => return Err(BenchError::NotTrainable(ModelKind::DeepBranch.name())),
        })
    }

    /// Predicted class index for a raw row.
    pub fn predict(&self, row: &[f64]) -> Result<usize, BenchError> {
        if let ModelBody::ShallowWaves(m) = &self.body {
            return Ok(ensemble::predict_hard_vote(m, &self.prepare(row)?)?.class);
        }
        Ok(crate::argmax(&self.predict_proba(row)?))
    }

    pub fn predict_rows(&self, x: &Matrix) -> Result<Vec<usize>, BenchError> {
        x.iter_rows().map(|r| self.predict(r)).collect()
    }

    /// Flattened embedding of a DeepWaves branch artifact.
    pub fn branch_embed(&self, row: &[f64]) -> Result<Vec<f64>, BenchError> {
        match &self.body {
            ModelBody::DeepBranch { model, branch } => Ok(model.branch_embed(&self.prepare(row)?, *branch)?),
            _ => Err(BenchError::KindMismatch { expected: ModelKind::DeepBranch.name(), found: self.meta.kind.name() }),
        }
    }

    /// Width of [`TrainedModel::branch_embed`] outputs.
    pub fn branch_width(&self) -> Option<usize> {
        match &self.body {
            ModelBody::DeepBranch { model, branch } => model.branch_widths().get(*branch).copied(),
            _ => None,
        }
    }

    /// The stand-alone artifact for ShallowWaves member `slot` (0 = RF,
    /// 1 = ERT, 2 = XGBoost); its probabilities equal the member's inside
    /// the ensemble.
    pub fn shallow_member(&self, slot: usize) -> Result<TrainedModel, BenchError> {
        let ModelBody::ShallowWaves(m) = &self.body else {
            return Err(BenchError::KindMismatch { expected: ModelKind::ShallowWaves.name(), found: self.meta.kind.name() });
        };
        let (kind, body) = match slot {
            0 => (ModelKind::RfCart, ModelBody::Forest(m.rf.clone())),
            1 => (ModelKind::ErtCart, ModelBody::Forest(m.ert.clone())),
            2 => (ModelKind::XgbGbtree, ModelBody::Boosted(m.xgb.clone())),
            _ => return Err(BenchError::BadSlot(slot)),
        };
        Ok(self.derived(kind, slot, body))
    }

    /// The stand-alone artifact for DeepWaves branch `b` (0-based).
    pub fn deep_branch(&self, b: usize) -> Result<TrainedModel, BenchError> {
        let ModelBody::DeepWaves(m) = &self.body else {
            return Err(BenchError::KindMismatch { expected: ModelKind::DeepWaves.name(), found: self.meta.kind.name() });
        };
        if b >= N_BRANCHES {
            return Err(BenchError::BadSlot(b));
        }
        Ok(self.derived(ModelKind::DeepBranch, b, ModelBody::DeepBranch { model: m.clone(), branch: b }))
    }

    fn derived(&self, kind: ModelKind, slot: usize, body: ModelBody) -> TrainedModel {
        TrainedModel {
            meta: ModelMeta { kind, slot: Some(slot), ..self.meta.clone() },
            scaler: self.scaler.clone(),
            body,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_list_respects_parentheses() {
        let specs = parse_model_list("cart, rf-cart(n_trees=5,max_depth=3),knn(k=3)").unwrap();
        let shown: Vec<String> = specs.iter().map(ToString::to_string).collect();
        assert_eq!(shown, ["cart", "rf-cart(max_depth=3,n_trees=5)", "knn(k=3)"]);
    }

    #[test]
    fn model_list_keywords_and_errors() {
        let deep = parse_model_list("deep").unwrap();
        assert!(deep.iter().all(|s| s.kind.family() == Family::Deep));
        assert!(deep.iter().any(|s| s.kind == ModelKind::Dbn));
        assert_eq!(parse_model_list("all").unwrap().len(), ModelKind::ALL.len() - 1);
        assert!(matches!(parse_model_list(" , "), Err(BenchError::EmptyModelList)));
        assert!(matches!(parse_model_list("nope"), Err(BenchError::UnknownModel(_))));
    }
}
