use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::NetworkState;
use super::tensor::Tensor;
use super::NnError;
use crate::matrix::Matrix;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Per-class loss multipliers.
    pub class_weights: Option<Vec<f64>>,
    /// Per-parameter-tensor update mask; `None` trains everything.
    pub trainable: Option<Vec<bool>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: Optimizer::adam(),
            seed: 0,
            class_weights: None,
            trainable: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_classes: usize, n_param_tensors: usize) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidConfig(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                return bad("adam needs beta in [0,1) and eps > 0");
            }
        }
        if let Some(w) = &self.class_weights {
            if w.len() != n_classes || w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return bad("class_weights must hold one non-negative weight per class");
            }
        }
        if self.trainable.as_ref().is_some_and(|m| m.len() != n_param_tensors) {
            return bad("trainable mask must cover every parameter tensor");
        }
        Ok(())
    }
}

/// Softmax cross-entropy over a batch: loss `Σ wᵢ·(−ln pᵢ[yᵢ]) / B` and the
/// gradient at the logits `(pᵢ − yᵢ)·wᵢ / B`.
pub fn loss_softmax_ce(
    probs: &[Vec<f64>],
    labels: &[usize],
    class_weights: Option<&[f64]>,
) -> Result<(f64, Vec<Vec<f64>>), NnError> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(NnError::ShapeMismatch(format!("{} prediction rows, {} labels", probs.len(), labels.len())));
    }
    let b = probs.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(probs.len());
    for (p, &y) in probs.iter().zip(labels) {
        if y >= p.len() {
            return Err(NnError::LabelOutOfRange { label: y, n_classes: p.len() });
        }
        let (l, g) = sample_loss(p, y, class_weights.map_or(1.0, |w| w[y]), b);
        loss += l;
        grads.push(g);
    }
    Ok((loss, grads))
}

fn sample_loss(p: &[f64], y: usize, w: f64, batch: f64) -> (f64, Vec<f64>) {
    let loss = -w * p[y].max(f64::MIN_POSITIVE).ln() / batch;
    let grad = p.iter().enumerate().map(|(c, &pc)| (pc - f64::from(u8::from(c == y))) * w / batch).collect();
    (loss, grad)
}

/// Samples per gradient-accumulation chunk. Fixed so the summation order,
/// and hence the result, does not depend on the thread count.
const CHUNK: usize = 8;

fn check_labels(labels: &[usize], k: usize) -> Result<(), NnError> {
    match labels.iter().find(|&&l| l >= k) {
        Some(&label) => Err(NnError::LabelOutOfRange { label, n_classes: k }),
        None => Ok(()),
    }
}

/// Mean weighted cross-entropy over a dataset.
pub fn dataset_loss(
    state: &NetworkState,
    x: &Matrix,
    labels: &[usize],
    class_weights: Option<&[f64]>,
) -> Result<f64, NnError> {
    check_labels(labels, state.n_outputs())?;
    let n = x.rows() as f64;
    let parts = (0..x.rows())
        .collect::<Vec<_>>()
        .par_chunks(64)
        .map(|chunk| {
            let mut acc = 0.0;
            for &i in chunk {
                let p = state.predict(x.row(i))?;
                acc += sample_loss(&p, labels[i], class_weights.map_or(1.0, |w| w[labels[i]]), n).0;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<f64>, NnError>>()?;
    Ok(parts.iter().sum())
}

/// Mini-batch training with seeded shuffling. Returns the trained state and
/// the full-training-set loss after every epoch.
pub fn train(
    mut state: NetworkState,
    x: &Matrix,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<(NetworkState, Vec<f64>), NnError> {
    let k = state.n_outputs();
    cfg.validate(k, state.params().len())?;
    if x.rows() != labels.len() {
        return Err(NnError::ShapeMismatch(format!("{} rows, {} labels", x.rows(), labels.len())));
    }
    if x.cols() != state.input_width() {
        return Err(NnError::WidthMismatch { expected: state.input_width(), found: x.cols() });
    }
    check_labels(labels, k)?;
    let weights = cfg.class_weights.as_deref();
    let mut r = rng::seeded(cfg.seed);
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut m: Vec<Tensor> = state.zero_grads();
    let mut v: Vec<Tensor> = state.zero_grads();
    let mut step = 0i32;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut r);
        for batch in order.chunks(cfg.batch_size) {
            let b = batch.len() as f64;
            let partials = batch
                .par_chunks(CHUNK)
                .map(|chunk| {
                    let mut g = state.zero_grads();
                    for &i in chunk {
                        let input = state.input_tensor(x.row(i))?;
                        let (p, cache) = state.forward(&input)?;
                        let (_, dlogits) = sample_loss(&p, labels[i], weights.map_or(1.0, |w| w[labels[i]]), b);
                        state.backward_into(&cache, &dlogits, &mut g)?;
                    }
                    Ok(g)
                })
                .collect::<Result<Vec<_>, NnError>>()?;
            let mut parts = partials.into_iter();
            let mut grads = parts.next().expect("non-empty batch");
            for g in parts {
                for (a, t) in grads.iter_mut().zip(&g) {
                    a.add_assign(t);
                }
            }
            step += 1;
            apply_update(&mut state, &grads, &mut m, &mut v, step, cfg);
        }
        let loss = dataset_loss(&state, x, labels, weights)?;
        if !loss.is_finite() {
            return Err(NnError::DivergedLoss { epoch });
        }
        history.push(loss);
    }
    Ok((state, history))
}

fn apply_update(state: &mut NetworkState, grads: &[Tensor], m: &mut [Tensor], v: &mut [Tensor], step: i32, cfg: &TrainConfig) {
    let lr = cfg.learning_rate;
    for (idx, ((p, g), (mt, vt))) in
        state.param_data_mut().zip(grads).zip(m.iter_mut().zip(v.iter_mut())).enumerate()
    {
        if cfg.trainable.as_ref().is_some_and(|mask| !mask[idx]) {
            continue;
        }
        match cfg.optimizer {
            Optimizer::Sgd => {
                for (w, d) in p.iter_mut().zip(g.data()) {
                    *w -= lr * d;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(step);
                let c2 = 1.0 - beta2.powi(step);
                for (((w, d), mi), vi) in p.iter_mut().zip(g.data()).zip(mt.data_mut()).zip(vt.data_mut()) {
                    *mi = beta1 * *mi + (1.0 - beta1) * d;
                    *vi = beta2 * *vi + (1.0 - beta2) * d * d;
                    *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{zoo, LayerSpec, NetworkSpec};
    use rand::Rng as _;

    fn blobs(seed: u64) -> (Matrix, Vec<usize>) {
        let mut r = rng::seeded(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..60 {
            let c = i % 2;
            let s = if c == 0 { -1.0 } else { 1.0 };
            rows.push([s * 1.5 + r.gen_range(-1.0..1.0), s + r.gen_range(-1.0..1.0)]);
            y.push(c);
        }
        (Matrix::from_rows(&rows), y)
    }

    #[test]
    fn loss_closed_forms() {
        let (l, g) = loss_softmax_ce(&[vec![0.0, 1.0, 0.0]], &[1], None).unwrap();
        assert_eq!(l, 0.0);
        assert!(g[0].iter().all(|&v| v == 0.0));
        let k = 22;
        let (l, _) = loss_softmax_ce(&vec![vec![1.0 / k as f64; k]; 3], &[0, 5, 21], None).unwrap();
        assert!((l - (k as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn class_weight_scales_contribution() {
        let probs = vec![vec![0.7, 0.2, 0.1], vec![0.3, 0.3, 0.4]];
        let labels = [0, 2];
        let base = loss_softmax_ce(&probs, &labels, Some(&[1.0, 1.0, 1.0])).unwrap().0;
        let doubled = loss_softmax_ce(&probs, &labels, Some(&[1.0, 1.0, 2.0])).unwrap().0;
        let class2 = -(0.4f64.ln()) / 2.0;
        assert!((doubled - base - class2).abs() < 1e-15);
    }

    #[test]
    fn perceptron_separates_blobs() {
        let (x, y) = blobs(1);
        let s = NetworkState::init(zoo::perceptron(2, 2), 3).unwrap();
        let cfg = TrainConfig { epochs: 200, batch_size: 16, learning_rate: 0.05, ..TrainConfig::default() };
        let (s, hist) = train(s, &x, &y, &cfg).unwrap();
        assert_eq!(hist.len(), 200);
        let acc = (0..x.rows()).filter(|&i| crate::argmax(&s.predict(x.row(i)).unwrap()) == y[i]).count();
        assert_eq!(acc, x.rows());
    }

    #[test]
    fn zero_epochs_returns_initial_state() {
        let (x, y) = blobs(2);
        let s = NetworkState::init(zoo::perceptron(2, 2), 3).unwrap();
        let (t, hist) = train(s.clone(), &x, &y, &TrainConfig { epochs: 0, ..TrainConfig::default() }).unwrap();
        assert_eq!(t, s);
        assert!(hist.is_empty());
    }

    #[test]
    fn seeded_training_is_bitwise_reproducible() {
        let (x, y) = blobs(3);
        let spec = NetworkSpec::sequential(
            (2, 1),
            vec![LayerSpec::lstm(3, false), LayerSpec::dense(2), LayerSpec::Softmax],
        )
        .unwrap();
        let cfg = TrainConfig { epochs: 4, batch_size: 7, seed: 9, ..TrainConfig::default() };
        let a = train(NetworkState::init(spec.clone(), 1).unwrap(), &x, &y, &cfg).unwrap();
        let b = train(NetworkState::init(spec, 1).unwrap(), &x, &y, &cfg).unwrap();
        assert_eq!(a.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn frozen_tensors_do_not_move() {
        let (x, y) = blobs(4);
        let spec = zoo::mlp(2, 2, false);
        let s = NetworkState::init(spec, 0).unwrap();
        let n = s.params().len();
        let mut mask = vec![true; n];
        mask[0] = false;
        let cfg = TrainConfig { epochs: 2, trainable: Some(mask), ..TrainConfig::default() };
        let (t, _) = train(s.clone(), &x, &y, &cfg).unwrap();
        assert_eq!(t.params()[0], s.params()[0]);
        assert_ne!(t.params()[1], s.params()[1]);
    }

    #[test]
    fn divergence_is_reported() {
        let (x, y) = blobs(5);
        let x = Matrix::new(x.rows(), x.cols(), x.data().iter().map(|v| v * 1e300).collect());
        let s = NetworkState::init(zoo::perceptron(2, 2), 0).unwrap();
        let cfg = TrainConfig { epochs: 3, optimizer: Optimizer::Sgd, learning_rate: 1e300, ..TrainConfig::default() };
        let err = train(s, &x, &y, &cfg).unwrap_err();
        assert!(matches!(err, NnError::DivergedLoss { .. } | NnError::NonFiniteActivation), "{err:?}");
    }

    #[test]
    fn bad_configs_rejected() {
        let (x, y) = blobs(6);
        let s = NetworkState::init(zoo::perceptron(2, 2), 0).unwrap();
        for cfg in [
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { learning_rate: -1.0, ..TrainConfig::default() },
            TrainConfig { class_weights: Some(vec![1.0]), ..TrainConfig::default() },
        ] {
            assert!(matches!(train(s.clone(), &x, &y, &cfg), Err(NnError::InvalidConfig(_))));
        }
    }
}
