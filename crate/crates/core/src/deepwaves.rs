//! DeepWaves: four convolutional/recurrent branches over the same input,
//! concatenated and classified by a single linear layer.

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::nnet::{self, LayerSpec, NetworkSpec, NetworkState, NnError, TrainConfig};

pub const N_BRANCHES: usize = 4;
pub const BRANCH_NAMES: [&str; N_BRANCHES] = ["4x(cnn+mp)", "4x(cnn+mp+lstm)", "4x(cnn+lstm+mp)", "5x(lstm)"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeepWavesWidths {
    pub filters: usize,
    pub kernel: usize,
    pub units: usize,
}

impl Default for DeepWavesWidths {
    fn default() -> Self {
        DeepWavesWidths { filters: 16, kernel: 3, units: 16 }
    }
}

/// Layers of branch `b` (0-based).
pub fn branch_layers(b: usize, w: &DeepWavesWidths) -> Vec<LayerSpec> {
    let conv = || [LayerSpec::conv1d(w.filters, w.kernel), LayerSpec::Relu];
    let pool = LayerSpec::maxpool(2);
    let lstm = LayerSpec::lstm(w.units, true);
    let mut layers = Vec::new();
    match b {
        0 => (0..4).for_each(|_| {
            layers.extend(conv());
            layers.push(pool);
        }),
        1 => (0..4).for_each(|_| {
            layers.extend(conv());
            layers.extend([pool, lstm]);
        }),
        2 => (0..4).for_each(|_| {
            layers.extend(conv());
            layers.extend([lstm, pool]);
        }),
        _ => layers.extend((0..5).map(|i| LayerSpec::lstm(w.units, i < 4))),
    }
    layers
}

/// The full four-branch graph for rows of `n_features` values.
pub fn build_deepwaves(n_features: usize, n_classes: usize, w: &DeepWavesWidths) -> NetworkSpec {
    NetworkSpec {
        input: (n_features, 1),
        branches: (0..N_BRANCHES).map(|b| branch_layers(b, w)).collect(),
        head: vec![LayerSpec::dense(n_classes), LayerSpec::Softmax],
    }
}

/// One branch with its own linear head, for ablation and stacking.
pub fn single_branch_spec(b: usize, n_features: usize, n_classes: usize, w: &DeepWavesWidths) -> NetworkSpec {
    NetworkSpec {
        input: (n_features, 1),
        branches: vec![branch_layers(b, w)],
        head: vec![LayerSpec::dense(n_classes), LayerSpec::Softmax],
    }
}

/// A trained (or freshly initialised) DeepWaves network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkState", into = "NetworkState")]
pub struct DeepWavesModel {
    state: NetworkState,
}

impl TryFrom<NetworkState> for DeepWavesModel {
    type Error = NnError;
    fn try_from(state: NetworkState) -> Result<Self, NnError> {
        DeepWavesModel::from_state(state)
    }
}

impl From<DeepWavesModel> for NetworkState {
    fn from(m: DeepWavesModel) -> Self {
        m.state
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainMode {
    /// All branches and the head trained together.
    Joint,
    /// Each branch trained alone with its own head, then the shared head
    /// trained over the frozen branches.
    SeparateThenStack,
}

impl DeepWavesModel {
    pub fn init(n_features: usize, n_classes: usize, w: &DeepWavesWidths, seed: u64) -> Result<Self, NnError> {
        Self::from_state(NetworkState::init(build_deepwaves(n_features, n_classes, w), seed)?)
    }

    /// Accepts only four-branch graphs with a `dense + softmax` head.
    pub fn from_state(state: NetworkState) -> Result<Self, NnError> {
        let spec = state.spec();
        if spec.branches.len() != N_BRANCHES {
            return Err(NnError::InvalidSpec(format!("expected {N_BRANCHES} branches, found {}", spec.branches.len())));
        }
        if !matches!(spec.head.as_slice(), [LayerSpec::Dense { .. }, LayerSpec::Softmax]) {
            return Err(NnError::InvalidSpec("head must be dense followed by softmax".into()));
        }
        Ok(DeepWavesModel { state })
    }

    pub fn state(&self) -> &NetworkState {
        &self.state
    }

    pub fn n_classes(&self) -> usize {
        self.state.n_outputs()
    }

    pub fn n_features(&self) -> usize {
        self.state.input_width()
    }

    pub fn branch_widths(&self) -> Vec<usize> {
        self.state.branch_widths()
    }

    /// Flattened output of branch `b` (0-based).
    pub fn branch_embed(&self, row: &[f64], b: usize) -> Result<Vec<f64>, NnError> {
        self.state.branch_embed(b, row)
    }

    /// Linear head plus softmax over the concatenated embeddings.
    pub fn apply_head(&self, embedding: &[f64]) -> Result<Vec<f64>, NnError> {
        self.state.apply_head(embedding)
    }

    pub fn predict(&self, row: &[f64]) -> Result<Vec<f64>, NnError> {
        self.state.predict(row)
    }

    pub fn train(
        self,
        x: &Matrix,
        labels: &[usize],
        cfg: &TrainConfig,
        mode: TrainMode,
    ) -> Result<(Self, Vec<f64>), NnError> {
        match mode {
            TrainMode::Joint => {
                let (state, hist) = nnet::train(self.state, x, labels, cfg)?;
                Ok((DeepWavesModel { state }, hist))
            }
            TrainMode::SeparateThenStack => self.train_stacked(x, labels, cfg),
        }
    }

    fn train_stacked(self, x: &Matrix, labels: &[usize], cfg: &TrainConfig) -> Result<(Self, Vec<f64>), NnError> {
        let spec = self.state.spec().clone();
        let mut params: Vec<_> = self.state.params().to_vec();
        for b in 0..N_BRANCHES {
            let single = NetworkSpec { input: spec.input, branches: vec![spec.branches[b].clone()], head: spec.head.clone() };
            let range = self.state.branch_param_range(b);
            let init = NetworkState::init(single, crate::rng::derive_seed(cfg.seed, b as u64))?;
            // Start from the full model's branch weights so both modes share an initialisation.
            let mut seeded_params = init.params().to_vec();
            seeded_params[..range.len()].clone_from_slice(&params[range.clone()]);
            let init = NetworkState::from_parts(init.spec().clone(), seeded_params)?;
            let branch_cfg = TrainConfig { trainable: None, ..cfg.clone() };
            let (trained, _) = nnet::train(init, x, labels, &branch_cfg)?;
            params[range.clone()].clone_from_slice(&trained.params()[..range.len()]);
        }
        let stacked = NetworkState::from_parts(spec, params)?;
        let head = stacked.head_param_range();
        let mask = (0..stacked.params().len()).map(|i| head.contains(&i)).collect();
        let (state, hist) = nnet::train(stacked, x, labels, &TrainConfig { trainable: Some(mask), ..cfg.clone() })?;
        Ok((DeepWavesModel { state }, hist))
    }
}
