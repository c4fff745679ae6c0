use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ForestError;
use crate::matrix::Matrix;
use crate::rng::{self, derive_seed};
use crate::trees::{self, NodeRows, RegressionTree, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Booster {
    GbTree,
    Dart,
    GbLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub booster: Booster,
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub tree: TreeParams,
    pub dart_drop_prob: f64,
    pub l2: f64,
    pub seed: u64,
}

impl BoostParams {
    pub fn new(booster: Booster) -> Self {
        BoostParams {
            booster,
            n_rounds: 100,
            learning_rate: 0.1,
            tree: TreeParams { max_depth: Some(3), ..TreeParams::cart() },
            dart_drop_prob: 0.1,
            l2: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ForestError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ForestError::InvalidParams("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dart_drop_prob) {
            return Err(ForestError::InvalidParams("dart_drop_prob must lie in [0, 1)".into()));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(ForestError::InvalidParams("l2 must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedTree {
    pub weight: f64,
    pub tree: RegressionTree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BoostedBody {
    /// One additive list of trees per class.
    Trees(Vec<Vec<WeightedTree>>),
    /// Row-major K × d weights plus a bias per class.
    Linear { weights: Matrix, bias: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub base_score: Vec<f64>,
    pub body: BoostedBody,
    pub n_classes: usize,
    pub n_features: usize,
}

impl BoostedModel {
    /// Raw additive scores (logits) for one row, width unchecked.
    pub fn scores(&self, row: &[f64]) -> Vec<f64> {
        let mut s = self.base_score.clone();
        match &self.body {
            BoostedBody::Trees(per_class) => {
                for (sc, list) in s.iter_mut().zip(per_class) {
                    for wt in list {
                        *sc += wt.weight * wt.tree.predict(row);
                    }
                }
            }
            BoostedBody::Linear { weights, bias } => {
                for (c, sc) in s.iter_mut().enumerate() {
                    *sc += bias[c] + dot(weights.row(c), row);
                }
            }
        }
        s
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn predict_boosted(model: &BoostedModel, row: &[f64]) -> Result<Vec<f64>, ForestError> {
    if row.len() != model.n_features {
        return Err(ForestError::WidthMismatch { expected: model.n_features, found: row.len() });
    }
    Ok(crate::softmax(&model.scores(row)))
}

pub fn fit_boosted(
    x: &Matrix,
    labels: &[usize],
    n_classes: usize,
    params: &BoostParams,
) -> Result<BoostedModel, ForestError> {
    fit_boosted_traced(x, labels, n_classes, params).map(|(m, _)| m)
}

/// Softmax boosting. Returns the model and the mean training cross-entropy
/// before the first round and after each round.
pub fn fit_boosted_traced(
    x: &Matrix,
    labels: &[usize],
    n_classes: usize,
    params: &BoostParams,
) -> Result<(BoostedModel, Vec<f64>), ForestError> {
    params.validate()?;
    let n = x.rows();
    if n == 0 {
        return Err(trees::TreeError::EmptyTrainingSet.into());
    }
    if labels.len() != n {
        return Err(trees::TreeError::LengthMismatch { rows: n, labels: labels.len() }.into());
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(trees::TreeError::LabelOutOfRange { label, n_classes }.into());
    }
    match params.booster {
        Booster::GbLinear => fit_linear(x, labels, n_classes, params),
        Booster::GbTree | Booster::Dart => fit_trees(x, labels, n_classes, params),
    }
}

fn cross_entropy(scores: &[Vec<f64>], labels: &[usize]) -> f64 {
    scores.iter().zip(labels).map(|(s, &y)| -crate::softmax(s)[y].max(1e-300).ln()).sum::<f64>() / labels.len() as f64
}

fn check_finite(scores: &[Vec<f64>], round: usize) -> Result<(), ForestError> {
    if scores.iter().flatten().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ForestError::NonFiniteScore(round))
    }
}

fn fit_trees(
    x: &Matrix,
    labels: &[usize],
    k: usize,
    params: &BoostParams,
) -> Result<(BoostedModel, Vec<f64>), ForestError> {
    let n = x.rows();
    let all: Vec<usize> = (0..n).collect();
    let root = NodeRows::new(x, &all);
    let base_score = vec![0.0; k];
    let mut scores = vec![base_score.clone(); n];
    let mut per_class: Vec<Vec<WeightedTree>> = vec![Vec::new(); k];
    let mut trace = vec![cross_entropy(&scores, labels)];
    let drop_prob = match params.booster {
        Booster::Dart => params.dart_drop_prob,
        _ => 0.0,
    };
    let mut drop_rng = rng::seeded(derive_seed(params.seed, u64::MAX));
    let eta = params.learning_rate;

    for round in 0..params.n_rounds {
        // Choose dropouts and remove their contribution from the scores.
        let mut dropped: Vec<Vec<usize>> = vec![Vec::new(); k];
        if drop_prob > 0.0 {
            for (c, list) in per_class.iter().enumerate() {
                for t in 0..list.len() {
                    if drop_rng.gen_bool(drop_prob) {
                        dropped[c].push(t);
                    }
                }
            }
        }
        let dropped_contrib: Vec<Vec<f64>> = (0..k)
            .map(|c| {
                (0..n)
                    .map(|i| dropped[c].iter().map(|&t| per_class[c][t].weight * per_class[c][t].tree.predict(x.row(i))).sum())
                    .collect()
            })
            .collect();
        for c in 0..k {
            if !dropped[c].is_empty() {
                for i in 0..n {
                    scores[i][c] -= dropped_contrib[c][i];
                }
            }
        }

        let probs: Vec<Vec<f64>> = scores.iter().map(|s| crate::softmax(s)).collect();
        let new_trees = (0..k)
            .into_par_iter()
            .map(|c| {
                let residual: Vec<f64> =
                    (0..n).map(|i| f64::from(u8::from(labels[i] == c)) - probs[i][c]).collect();
                let seed = derive_seed(params.seed, (round * k + c) as u64);
                let tp = TreeParams { seed, ..params.tree };
                let mut r = rng::seeded(seed);
                trees::fit_regression_tree_presorted(x, &residual, root.clone(), &tp, &mut r)
            })
            .collect::<Result<Vec<_>, _>>()?;

        for (c, tree) in new_trees.into_iter().enumerate() {
            let d = dropped[c].len() as f64;
            let weight = eta / (d + 1.0);
            if !dropped[c].is_empty() {
                let shrink = d / (d + 1.0);
                for &t in &dropped[c] {
                    per_class[c][t].weight *= shrink;
                }
                for i in 0..n {
                    scores[i][c] += shrink * dropped_contrib[c][i];
                }
            }
            for i in 0..n {
                scores[i][c] += weight * tree.predict(x.row(i));
            }
            per_class[c].push(WeightedTree { weight, tree });
        }
        check_finite(&scores, round)?;
        trace.push(cross_entropy(&scores, labels));
    }
    let model = BoostedModel { base_score, body: BoostedBody::Trees(per_class), n_classes: k, n_features: x.cols() };
    Ok((model, trace))
}

fn fit_linear(
    x: &Matrix,
    labels: &[usize],
    k: usize,
    params: &BoostParams,
) -> Result<(BoostedModel, Vec<f64>), ForestError> {
    let (n, d) = (x.rows(), x.cols());
    let mut weights = Matrix::zeros(k, d);
    let mut bias = vec![0.0; k];
    let score_all = |w: &Matrix, b: &[f64]| -> Vec<Vec<f64>> {
        (0..n).map(|i| (0..k).map(|c| b[c] + dot(w.row(c), x.row(i))).collect()).collect()
    };
    let mut scores = score_all(&weights, &bias);
    let mut trace = vec![cross_entropy(&scores, labels)];
    for round in 0..params.n_rounds {
        let mut gw = Matrix::zeros(k, d);
        let mut gb = vec![0.0; k];
        for i in 0..n {
            let p = crate::softmax(&scores[i]);
            for c in 0..k {
                let g = p[c] - f64::from(u8::from(labels[i] == c));
                gb[c] += g;
                for (gwj, xj) in gw.row_mut(c).iter_mut().zip(x.row(i)) {
                    *gwj += g * xj;
                }
            }
        }
        let inv_n = 1.0 / n as f64;
        for c in 0..k {
            for (w, g) in weights.row_mut(c).iter_mut().zip(gw.row(c)) {
                *w -= params.learning_rate * (g * inv_n + params.l2 * *w);
            }
            bias[c] -= params.learning_rate * gb[c] * inv_n;
        }
        scores = score_all(&weights, &bias);
        check_finite(&scores, round)?;
        trace.push(cross_entropy(&scores, labels));
    }
    let model =
        BoostedModel { base_score: vec![0.0; k], body: BoostedBody::Linear { weights, bias }, n_classes: k, n_features: d };
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn blobs(n_per: usize, seed: u64) -> (Matrix, Vec<usize>) {
        let mut r = rng::seeded(seed);
        let centers = [[0.0, 0.0], [2.5, 2.5], [0.0, 3.0]];
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for (c, ctr) in centers.iter().enumerate() {
            for _ in 0..n_per {
                rows.push([ctr[0] + r.gen_range(-1.5..1.5), ctr[1] + r.gen_range(-1.5..1.5)]);
                y.push(c);
            }
        }
        (Matrix::from_rows(&rows), y)
    }

    #[test]
    fn zero_rounds_is_uniform() {
        let (x, y) = blobs(5, 0);
        for b in [Booster::GbTree, Booster::Dart, Booster::GbLinear] {
            let m = fit_boosted(&x, &y, 3, &BoostParams { n_rounds: 0, ..BoostParams::new(b) }).unwrap();
            for probe in [[0.0, 0.0], [9.0, -4.0]] {
                let p = predict_boosted(&m, &probe).unwrap();
                assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
            }
        }
    }

    #[test]
    fn residual_at_uniform_prediction() {
        // A single full-depth round on one sample per class fits the residuals
        // exactly, so each leaf holds y - 1/K for its own class.
        let x = Matrix::from_rows(&[[0.0], [1.0], [2.0], [3.0]]);
        let y = [0, 1, 2, 3];
        let p = BoostParams { n_rounds: 1, learning_rate: 1.0, tree: TreeParams::cart(), ..BoostParams::new(Booster::GbTree) };
        let m = fit_boosted(&x, &y, 4, &p).unwrap();
        let s = m.scores(&[2.0]);
        assert!((s[2] - 0.75).abs() < 1e-15);
        assert!((s[0] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn gbtree_loss_strictly_decreases() {
        let (x, y) = blobs(14, 3);
        let x = x.select_rows(&(0..40).collect::<Vec<_>>());
        let y = &y[..40];
        let p = BoostParams { n_rounds: 10, ..BoostParams::new(Booster::GbTree) };
        let (_, trace) = fit_boosted_traced(&x, y, 3, &p).unwrap();
        assert_eq!(trace.len(), 11);
        for w in trace.windows(2) {
            assert!(w[1] < w[0], "{trace:?}");
        }
    }

    #[test]
    fn dart_without_drops_matches_gbtree() {
        let (x, y) = blobs(12, 5);
        let g = fit_boosted(&x, &y, 3, &BoostParams { n_rounds: 15, seed: 4, ..BoostParams::new(Booster::GbTree) }).unwrap();
        let d = fit_boosted(
            &x,
            &y,
            3,
            &BoostParams { n_rounds: 15, seed: 4, dart_drop_prob: 0.0, ..BoostParams::new(Booster::Dart) },
        )
        .unwrap();
        for i in 0..x.rows() {
            for (a, b) in g.scores(x.row(i)).iter().zip(d.scores(x.row(i))) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn dart_scales_dropped_trees() {
        let (x, y) = blobs(10, 6);
        let p = BoostParams { n_rounds: 20, dart_drop_prob: 0.5, seed: 2, ..BoostParams::new(Booster::Dart) };
        let (m, trace) = fit_boosted_traced(&x, &y, 3, &p).unwrap();
        let BoostedBody::Trees(per_class) = &m.body else { panic!("tree body expected") };
        assert!(per_class.iter().flatten().any(|t| t.weight < p.learning_rate));
        assert!(trace.last().unwrap() < &trace[0]);
        // Training-time running scores must agree with a fresh evaluation.
        let again = fit_boosted(&x, &y, 3, &p).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn gblinear_separates_linear_data() {
        let mut r = rng::seeded(8);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        while rows.len() < 60 {
            let a: f64 = r.gen_range(-2.0..2.0);
            let b: f64 = r.gen_range(-2.0..2.0);
            let margin = a + 0.5 * b;
            if margin.abs() < 0.3 {
                continue;
            }
            rows.push([a, b]);
            y.push(usize::from(margin > 0.0));
        }
        let x = Matrix::from_rows(&rows);
        let p = BoostParams { n_rounds: 500, learning_rate: 0.5, l2: 0.0, ..BoostParams::new(Booster::GbLinear) };
        let m = fit_boosted(&x, &y, 2, &p).unwrap();
        let correct = (0..x.rows()).filter(|&i| crate::argmax(&predict_boosted(&m, x.row(i)).unwrap()) == y[i]).count();
        assert_eq!(correct, x.rows());
    }

    #[test]
    fn diverging_learning_rate_is_reported() {
        let x = Matrix::from_rows(&[[1e150], [-1e150]]);
        let p = BoostParams { n_rounds: 5, learning_rate: 1e200, ..BoostParams::new(Booster::GbLinear) };
        assert!(matches!(fit_boosted(&x, &[0, 1], 2, &p), Err(ForestError::NonFiniteScore(_))));
    }

    #[test]
    fn invalid_params_rejected() {
        let x = Matrix::from_rows(&[[0.0]]);
        for p in [
            BoostParams { learning_rate: 0.0, ..BoostParams::new(Booster::GbTree) },
            BoostParams { dart_drop_prob: 1.0, ..BoostParams::new(Booster::Dart) },
            BoostParams { l2: -1.0, ..BoostParams::new(Booster::GbLinear) },
        ] {
            assert!(matches!(fit_boosted(&x, &[0], 1, &p), Err(ForestError::InvalidParams(_))));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn boosted_probabilities_sum_to_one(seed in any::<u64>(), probe in [-4.0f64..6.0, -4.0f64..6.0], which in 0usize..3) {
            let (x, y) = blobs(6, seed);
            let b = [Booster::GbTree, Booster::Dart, Booster::GbLinear][which];
            let m = fit_boosted(&x, &y, 3, &BoostParams { n_rounds: 8, seed, ..BoostParams::new(b) }).unwrap();
            let p = predict_boosted(&m, &probe).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
