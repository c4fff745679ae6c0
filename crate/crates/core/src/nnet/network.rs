use std::ops::Range;
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::layers::{self, Cache, LayerSpec};
use super::tensor::Tensor;
use super::NnError;
use crate::rng;

/// A computation graph: the input feeds every branch, branch outputs are
/// flattened and concatenated, and the head maps the concatenation to class
/// probabilities. The head must end in [`LayerSpec::Softmax`]. A plain
/// sequential network is a single branch followed by a softmax head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Input shape `(length, channels)`.
    pub input: (usize, usize),
    pub branches: Vec<Vec<LayerSpec>>,
    pub head: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// A sequential network; the last layer must be the softmax.
    pub fn sequential(input: (usize, usize), mut layers: Vec<LayerSpec>) -> Result<Self, NnError> {
        if layers.pop() != Some(LayerSpec::Softmax) {
            return Err(NnError::InvalidSpec("network must end with softmax".into()));
        }
        Ok(NetworkSpec { input, branches: vec![layers], head: vec![LayerSpec::Softmax] })
    }

    /// Checks the shape chain and lays out the parameters.
    pub(crate) fn plan(&self) -> Result<Plan, NnError> {
        let (len, ch) = self.input;
        if len == 0 || ch == 0 {
            return Err(NnError::InvalidSpec("input shape must be positive".into()));
        }
        if self.branches.is_empty() {
            return Err(NnError::InvalidSpec("at least one branch is required".into()));
        }
        if self.head.last() != Some(&LayerSpec::Softmax) {
            return Err(NnError::InvalidSpec("head must end with softmax".into()));
        }
        let mut param_shapes = Vec::new();
        let mut branches = Vec::new();
        let mut branch_out = Vec::new();
        let mut branch_params = Vec::new();
        for layers in &self.branches {
            let lo = param_shapes.len();
            let (planned, out) = plan_layers(layers, self.input, &mut param_shapes)?;
            branch_params.push(lo..param_shapes.len());
            branches.push(planned);
            branch_out.push(out);
        }
        let width: usize = branch_out.iter().map(|(l, c)| l * c).sum();
        let lo = param_shapes.len();
        let (head, out) = plan_layers(&self.head, (1, width), &mut param_shapes)?;
        let head_params = lo..param_shapes.len();
        let n_outputs = out.0 * out.1;
        Ok(Plan { branches, branch_out, head, n_outputs, param_shapes, branch_params, head_params })
    }
}

fn plan_layers(
    layers: &[LayerSpec],
    mut shape: (usize, usize),
    param_shapes: &mut Vec<(Vec<usize>, usize)>,
) -> Result<(Vec<PlannedLayer>, (usize, usize)), NnError> {
    let mut planned = Vec::with_capacity(layers.len());
    for spec in layers {
        let out = spec.output_shape(shape)?;
        let start = param_shapes.len();
        param_shapes.extend(spec.param_shapes(shape));
        planned.push(PlannedLayer { spec: *spec, params: start..param_shapes.len() });
        shape = out;
    }
    Ok((planned, shape))
}

#[derive(Debug)]
pub(crate) struct PlannedLayer {
    pub(crate) spec: LayerSpec,
    pub(crate) params: Range<usize>,
}

#[derive(Debug)]
pub(crate) struct Plan {
    pub(crate) branches: Vec<Vec<PlannedLayer>>,
    branch_out: Vec<(usize, usize)>,
    pub(crate) head: Vec<PlannedLayer>,
    n_outputs: usize,
    param_shapes: Vec<(Vec<usize>, usize)>,
    branch_params: Vec<Range<usize>>,
    head_params: Range<usize>,
}

/// Forward-pass intermediates for one sample.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    branches: Vec<Vec<Cache>>,
    head: Vec<Cache>,
}

/// A network specification together with its parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawState", into = "RawState")]
pub struct NetworkState {
    spec: NetworkSpec,
    params: Vec<Tensor>,
    plan: Arc<Plan>,
}

#[derive(Serialize, Deserialize)]
struct RawState {
    spec: NetworkSpec,
    params: Vec<Tensor>,
}

impl TryFrom<RawState> for NetworkState {
    type Error = NnError;
    fn try_from(raw: RawState) -> Result<Self, NnError> {
        NetworkState::from_parts(raw.spec, raw.params)
    }
}

impl From<NetworkState> for RawState {
    fn from(s: NetworkState) -> Self {
        RawState { spec: s.spec, params: s.params }
    }
}

impl PartialEq for NetworkState {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.params == other.params
    }
}

fn run_layers(layers: &[PlannedLayer], params: &[Tensor], mut x: Tensor, caches: &mut Vec<Cache>) -> Tensor {
    for l in layers {
        let (y, c) = layers::forward(&l.spec, &params[l.params.clone()], x);
        caches.push(c);
        x = y;
    }
    x
}

impl NetworkState {
    /// Random initialisation: weights uniform in ±√(6 / fan_in), biases zero.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self, NnError> {
        let plan = spec.plan()?;
        let mut r = rng::seeded(seed);
        let params = plan
            .param_shapes
            .iter()
            .map(|(shape, fan_in)| {
                let mut t = Tensor::zeros(shape);
                if *fan_in > 0 {
                    let bound = (6.0 / *fan_in as f64).sqrt();
                    t.data_mut().iter_mut().for_each(|v| *v = r.gen_range(-bound..bound));
                }
                t
            })
            .collect();
        Ok(NetworkState { spec, params, plan: Arc::new(plan) })
    }

    pub fn from_parts(spec: NetworkSpec, params: Vec<Tensor>) -> Result<Self, NnError> {
        let plan = spec.plan()?;
        if params.len() != plan.param_shapes.len()
            || params.iter().zip(&plan.param_shapes).any(|(t, (s, _))| t.shape() != s.as_slice())
        {
            return Err(NnError::ShapeMismatch("parameter tensors do not match the specification".into()));
        }
        if !params.iter().all(Tensor::is_finite) {
            return Err(NnError::NonFiniteActivation);
        }
        Ok(NetworkState { spec, params, plan: Arc::new(plan) })
    }

    pub(crate) fn plan(&self) -> &Plan {
        &self.plan
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    /// Mutable parameter storage; shapes are fixed.
    pub fn param_data_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.params.iter_mut().map(Tensor::data_mut)
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn n_outputs(&self) -> usize {
        self.plan.n_outputs
    }

    pub fn input_width(&self) -> usize {
        self.spec.input.0 * self.spec.input.1
    }

    pub fn n_branches(&self) -> usize {
        self.plan.branches.len()
    }

    /// Flattened output width of each branch.
    pub fn branch_widths(&self) -> Vec<usize> {
        self.plan.branch_out.iter().map(|(l, c)| l * c).collect()
    }

    /// Indices (into [`Self::params`]) of the tensors owned by branch `b`.
    pub fn branch_param_range(&self, b: usize) -> Range<usize> {
        self.plan.branch_params[b].clone()
    }

    pub fn head_param_range(&self) -> Range<usize> {
        self.plan.head_params.clone()
    }

    /// Reshapes a flat feature row to the input shape.
    pub fn input_tensor(&self, row: &[f64]) -> Result<Tensor, NnError> {
        if row.len() != self.input_width() {
            return Err(NnError::WidthMismatch { expected: self.input_width(), found: row.len() });
        }
        Ok(Tensor::seq(self.spec.input.0, self.spec.input.1, row.to_vec()))
    }

    fn branch_forward(&self, b: usize, x: Tensor, caches: &mut Vec<Cache>) -> Result<Vec<f64>, NnError> {
        let y = run_layers(&self.plan.branches[b], &self.params, x, caches);
        if !y.is_finite() {
            return Err(NnError::NonFiniteActivation);
        }
        Ok(y.into_data())
    }

    fn head_forward(&self, embedding: Vec<f64>, caches: &mut Vec<Cache>) -> Result<Vec<f64>, NnError> {
        let width = embedding.len();
        let y = run_layers(&self.plan.head, &self.params, Tensor::seq(1, width, embedding), caches);
        if !y.is_finite() {
            return Err(NnError::NonFiniteActivation);
        }
        Ok(y.into_data())
    }

    /// Flattened output of branch `b` for one input row.
    pub fn branch_embed(&self, b: usize, row: &[f64]) -> Result<Vec<f64>, NnError> {
        if b >= self.n_branches() {
            return Err(NnError::InvalidBranch(b));
        }
        let x = self.input_tensor(row)?;
        self.branch_forward(b, x, &mut Vec::new())
    }

    /// Head applied to the concatenation of all branch embeddings.
    pub fn apply_head(&self, embedding: &[f64]) -> Result<Vec<f64>, NnError> {
        let width: usize = self.branch_widths().iter().sum();
        if embedding.len() != width {
            return Err(NnError::WidthMismatch { expected: width, found: embedding.len() });
        }
        self.head_forward(embedding.to_vec(), &mut Vec::new())
    }

    /// Class probabilities plus the intermediates needed by [`Self::backward`].
    pub fn forward(&self, input: &Tensor) -> Result<(Vec<f64>, ForwardCache), NnError> {
        if input.shape() != [self.spec.input.0, self.spec.input.1] {
            return Err(NnError::ShapeMismatch(format!("input shape {:?}, expected {:?}", input.shape(), self.spec.input)));
        }
        let mut branch_caches = Vec::with_capacity(self.n_branches());
        let mut embedding = Vec::new();
        for b in 0..self.n_branches() {
            let mut caches = Vec::new();
            embedding.extend(self.branch_forward(b, input.clone(), &mut caches)?);
            branch_caches.push(caches);
        }
        let mut head = Vec::new();
        let probs = self.head_forward(embedding, &mut head)?;
        Ok((probs, ForwardCache { branches: branch_caches, head }))
    }

    pub fn predict(&self, row: &[f64]) -> Result<Vec<f64>, NnError> {
        let x = self.input_tensor(row)?;
        self.forward(&x).map(|(p, _)| p)
    }

    /// Zero tensors shaped like the parameters.
    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params.iter().map(|t| Tensor::zeros(t.shape())).collect()
    }

    /// Back-propagates `dlogits`, the loss gradient at the input of the
    /// terminal softmax, accumulating parameter gradients into `grads`.
    pub fn backward_into(&self, cache: &ForwardCache, dlogits: &[f64], grads: &mut [Tensor]) -> Result<(), NnError> {
        let plan = &self.plan;
        if cache.head.len() != plan.head.len()
            || cache.branches.len() != plan.branches.len()
            || cache.branches.iter().zip(&plan.branches).any(|(c, l)| c.len() != l.len())
        {
            return Err(NnError::MissingCache);
        }
        if dlogits.len() != plan.n_outputs || grads.len() != self.params.len() {
            return Err(NnError::ShapeMismatch("gradient buffers do not match the network".into()));
        }
        let mut dy = Tensor::seq(1, dlogits.len(), dlogits.to_vec());
        for (l, c) in plan.head.iter().zip(&cache.head).rev().skip(1) {
            dy = layers::backward(&l.spec, &self.params[l.params.clone()], c, &dy, &mut grads[l.params.clone()]);
        }
        let mut offset = 0;
        for ((layers_b, caches_b), &(len, ch)) in plan.branches.iter().zip(&cache.branches).zip(&plan.branch_out) {
            let width = len * ch;
            let mut d = Tensor::seq(len, ch, dy.data()[offset..offset + width].to_vec());
            offset += width;
            for (l, c) in layers_b.iter().zip(caches_b).rev() {
                d = layers::backward(&l.spec, &self.params[l.params.clone()], c, &d, &mut grads[l.params.clone()]);
            }
        }
        Ok(())
    }

    pub fn backward(&self, cache: &ForwardCache, dlogits: &[f64]) -> Result<Vec<Tensor>, NnError> {
        let mut grads = self.zero_grads();
        self.backward_into(cache, dlogits, &mut grads)?;
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_branch() -> NetworkSpec {
        NetworkSpec {
            input: (6, 1),
            branches: vec![
                vec![LayerSpec::conv1d(2, 3), LayerSpec::Relu, LayerSpec::maxpool(2)],
                vec![],
                vec![LayerSpec::lstm(3, false)],
            ],
            head: vec![LayerSpec::dense(4), LayerSpec::Softmax],
        }
    }

    #[test]
    fn plan_layout() {
        let s = NetworkState::init(two_branch(), 1).unwrap();
        assert_eq!(s.branch_widths(), vec![6, 6, 3]);
        assert_eq!(s.branch_param_range(0), 0..2);
        assert_eq!(s.branch_param_range(1), 2..2);
        assert_eq!(s.branch_param_range(2), 2..5);
        assert_eq!(s.head_param_range(), 5..7);
        assert_eq!(s.params()[5].shape(), &[4, 15]);
        assert_eq!(s.n_outputs(), 4);
        assert_eq!(s.n_params(), 2 * 3 + 2 + 12 + 36 + 12 + 60 + 4);
    }

    #[test]
    fn decomposition_is_bitwise() {
        let s = NetworkState::init(two_branch(), 2).unwrap();
        let row = [0.3, -1.2, 2.0, 0.0, 0.7, -0.4];
        let mut emb = Vec::new();
        for b in 0..3 {
            emb.extend(s.branch_embed(b, &row).unwrap());
        }
        assert_eq!(s.apply_head(&emb).unwrap(), s.predict(&row).unwrap());
        assert_eq!(s.branch_embed(3, &row), Err(NnError::InvalidBranch(3)));
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = two_branch();
        s.head.pop();
        assert!(matches!(NetworkState::init(s, 0), Err(NnError::InvalidSpec(_))));
        assert!(matches!(
            NetworkSpec::sequential((3, 1), vec![LayerSpec::dense(2)]),
            Err(NnError::InvalidSpec(_))
        ));
        let zero = NetworkSpec::sequential((3, 1), vec![LayerSpec::dense(0), LayerSpec::Softmax]).unwrap();
        assert!(matches!(NetworkState::init(zero, 0), Err(NnError::InvalidSpec(_))));
    }

    #[test]
    fn serde_round_trip_revalidates() {
        let s = NetworkState::init(two_branch(), 3).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        let back: NetworkState = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        let row = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(back.predict(&row).unwrap(), s.predict(&row).unwrap());
        let mut raw: serde_json::Value = serde_json::from_str(&json).unwrap();
        raw["params"].as_array_mut().unwrap().pop();
        assert!(serde_json::from_value::<NetworkState>(raw).is_err());
    }

    #[test]
    fn cache_mismatch_is_reported() {
        let a = NetworkState::init(two_branch(), 1).unwrap();
        let b = NetworkState::init(
            NetworkSpec::sequential((6, 1), vec![LayerSpec::dense(4), LayerSpec::Softmax]).unwrap(),
            1,
        )
        .unwrap();
        let (_, cache) = b.forward(&b.input_tensor(&[0.0; 6]).unwrap()).unwrap();
        assert_eq!(a.backward(&cache, &[0.0; 4]).unwrap_err(), NnError::MissingCache);
    }
}
