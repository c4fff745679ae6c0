//! Non-tree baselines: k-nearest neighbours, Gaussian naive Bayes and
//! multinomial logistic regression.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("{rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("label {label} outside 0..{n_classes}")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("class {0} has no training rows")]
    EmptyClass(usize),
    #[error("row has {found} features, model expects {expected}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("invalid baseline parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineKind {
    Knn,
    Gnb,
    LogReg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineParams {
    pub kind: BaselineKind,
    pub knn_k: usize,
    pub logreg_lr: f64,
    pub logreg_epochs: usize,
    pub logreg_l2: f64,
    /// Variance floor as a fraction of the largest per-feature variance.
    pub var_smoothing: f64,
}

impl BaselineParams {
    pub fn new(kind: BaselineKind) -> Self {
        BaselineParams { kind, knn_k: 5, logreg_lr: 0.1, logreg_epochs: 200, logreg_l2: 1e-4, var_smoothing: 1e-9 }
    }

    pub fn validate(&self) -> Result<(), BaselineError> {
        let bad = |m: &str| Err(BaselineError::InvalidParams(m.into()));
        match self.kind {
            BaselineKind::Knn if self.knn_k == 0 => bad("knn_k must be >= 1"),
            BaselineKind::Gnb if !(self.var_smoothing > 0.0 && self.var_smoothing.is_finite()) => {
                bad("var_smoothing must be positive")
            }
            BaselineKind::LogReg if !(self.logreg_lr > 0.0 && self.logreg_lr.is_finite()) => {
                bad("logreg_lr must be positive")
            }
            BaselineKind::LogReg if !(self.logreg_l2 >= 0.0 && self.logreg_l2.is_finite()) => {
                bad("logreg_l2 must be non-negative")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BaselineModel {
    Knn { x: Matrix, labels: Vec<usize>, k: usize, n_classes: usize },
    Gnb { log_priors: Vec<f64>, means: Matrix, vars: Matrix },
    LogReg { weights: Matrix, bias: Vec<f64> },
}

fn check(x: &Matrix, labels: &[usize], n_classes: usize) -> Result<(), BaselineError> {
    if x.rows() == 0 {
        return Err(BaselineError::EmptyTrainingSet);
    }
    if labels.len() != x.rows() {
        return Err(BaselineError::LengthMismatch { rows: x.rows(), labels: labels.len() });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(BaselineError::LabelOutOfRange { label, n_classes });
    }
    Ok(())
}

pub fn fit_baseline(
    x: &Matrix,
    labels: &[usize],
    n_classes: usize,
    params: &BaselineParams,
) -> Result<BaselineModel, BaselineError> {
    params.validate()?;
    check(x, labels, n_classes)?;
    match params.kind {
        BaselineKind::Knn => {
            Ok(BaselineModel::Knn { x: x.clone(), labels: labels.to_vec(), k: params.knn_k, n_classes })
        }
        BaselineKind::Gnb => fit_gnb(x, labels, n_classes, params.var_smoothing),
        BaselineKind::LogReg => Ok(fit_logreg_traced(x, labels, n_classes, params).0),
    }
}

fn fit_gnb(x: &Matrix, labels: &[usize], k: usize, smoothing: f64) -> Result<BaselineModel, BaselineError> {
    let d = x.cols();
    let mut counts = vec![0usize; k];
    let mut means = Matrix::zeros(k, d);
    for (i, &c) in labels.iter().enumerate() {
        counts[c] += 1;
        for (m, v) in means.row_mut(c).iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(BaselineError::EmptyClass(c));
    }
    for c in 0..k {
        let n = counts[c] as f64;
        means.row_mut(c).iter_mut().for_each(|m| *m /= n);
    }
    let mut vars = Matrix::zeros(k, d);
    for (i, &c) in labels.iter().enumerate() {
        for j in 0..d {
            let dev = x.get(i, j) - means.get(c, j);
            vars.set(c, j, vars.get(c, j) + dev * dev);
        }
    }
    for c in 0..k {
        let n = counts[c] as f64;
        vars.row_mut(c).iter_mut().for_each(|v| *v /= n);
    }
    // Floor relative to the largest overall feature variance.
    let max_var = (0..d)
        .map(|j| {
            let col = x.column(j);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64
        })
        .fold(0.0, f64::max);
    let floor = smoothing * if max_var > 0.0 { max_var } else { 1.0 };
    let mut floored = vars;
    floored.data_mut().iter_mut().for_each(|v| *v = v.max(floor));
    let total = labels.len() as f64;
    let log_priors = counts.iter().map(|&n| (n as f64 / total).ln()).collect();
    Ok(BaselineModel::Gnb { log_priors, means, vars: floored })
}

/// Full-batch gradient descent on mean softmax cross-entropy plus
/// `l2/2 · ‖W‖²`. Returns the model and the loss before each epoch and
/// after the last one.
pub fn fit_logreg_traced(
    x: &Matrix,
    labels: &[usize],
    k: usize,
    params: &BaselineParams,
) -> (BaselineModel, Vec<f64>) {
    let (n, d) = (x.rows(), x.cols());
    let mut weights = Matrix::zeros(k, d);
    let mut bias = vec![0.0; k];
    let mut trace = Vec::with_capacity(params.logreg_epochs + 1);
    let inv_n = 1.0 / n as f64;
    for epoch in 0..=params.logreg_epochs {
        let mut gw = Matrix::zeros(k, d);
        let mut gb = vec![0.0; k];
        let mut loss = 0.0;
        for i in 0..n {
            let row = x.row(i);
            let p = crate::softmax(&linear_scores(&weights, &bias, row));
            loss -= p[labels[i]].max(1e-300).ln();
            for c in 0..k {
                let g = p[c] - f64::from(u8::from(labels[i] == c));
                gb[c] += g;
                for (gj, xj) in gw.row_mut(c).iter_mut().zip(row) {
                    *gj += g * xj;
                }
            }
        }
        let penalty: f64 = weights.data().iter().map(|w| w * w).sum::<f64>() * params.logreg_l2 / 2.0;
        trace.push(loss * inv_n + penalty);
        if epoch == params.logreg_epochs {
            break;
        }
        for c in 0..k {
            for (w, g) in weights.row_mut(c).iter_mut().zip(gw.row(c)) {
                *w -= params.logreg_lr * (g * inv_n + params.logreg_l2 * *w);
            }
            bias[c] -= params.logreg_lr * gb[c] * inv_n;
        }
    }
    (BaselineModel::LogReg { weights, bias }, trace)
}

fn linear_scores(weights: &Matrix, bias: &[f64], row: &[f64]) -> Vec<f64> {
    (0..weights.rows()).map(|c| bias[c] + weights.row(c).iter().zip(row).map(|(w, v)| w * v).sum::<f64>()).collect()
}

impl BaselineModel {
    pub fn n_features(&self) -> usize {
        match self {
            BaselineModel::Knn { x, .. } => x.cols(),
            BaselineModel::Gnb { means, .. } => means.cols(),
            BaselineModel::LogReg { weights, .. } => weights.cols(),
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            BaselineModel::Knn { n_classes, .. } => *n_classes,
            BaselineModel::Gnb { log_priors, .. } => log_priors.len(),
            BaselineModel::LogReg { bias, .. } => bias.len(),
        }
    }
}

/// Indices of the `k` nearest training rows, ordered by (distance, row index).
pub fn nearest_neighbours(x: &Matrix, query: &[f64], k: usize) -> Vec<usize> {
    let mut dist: Vec<(f64, usize)> = (0..x.rows())
        .map(|i| (x.row(i).iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
        .collect();
    let k = k.min(dist.len());
    let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < dist.len() {
        dist.select_nth_unstable_by(k, order);
        dist.truncate(k);
    }
    dist.sort_by(order);
    dist.into_iter().map(|(_, i)| i).collect()
}

pub fn predict_baseline(model: &BaselineModel, row: &[f64]) -> Result<Vec<f64>, BaselineError> {
    if row.len() != model.n_features() {
        return Err(BaselineError::WidthMismatch { expected: model.n_features(), found: row.len() });
    }
    Ok(match model {
        BaselineModel::Knn { x, labels, k, n_classes } => {
            let nn = nearest_neighbours(x, row, *k);
            let mut p = vec![0.0; *n_classes];
            for &i in &nn {
                p[labels[i]] += 1.0;
            }
            let m = nn.len() as f64;
            p.iter_mut().for_each(|v| *v /= m);
            p
        }
        BaselineModel::Gnb { log_priors, means, vars } => {
            let log_post: Vec<f64> = (0..log_priors.len())
                .map(|c| {
                    let ll: f64 = row
                        .iter()
                        .zip(means.row(c))
                        .zip(vars.row(c))
                        .map(|((v, m), s2)| -0.5 * ((2.0 * std::f64::consts::PI * s2).ln() + (v - m).powi(2) / s2))
                        .sum();
                    log_priors[c] + ll
                })
                .collect();
            crate::softmax(&log_post)
        }
        BaselineModel::LogReg { weights, bias } => crate::softmax(&linear_scores(weights, bias, row)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn blobs(n_per: usize, seed: u64) -> (Matrix, Vec<usize>) {
        let mut r = rng::seeded(seed);
        let centers = [[-1.0, -1.0], [1.0, 1.0], [-1.0, 1.2]];
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for (c, ctr) in centers.iter().enumerate() {
            for _ in 0..n_per {
                rows.push([ctr[0] + r.gen_range(-0.6..0.6), ctr[1] + r.gen_range(-0.6..0.6)]);
                y.push(c);
            }
        }
        (Matrix::from_rows(&rows), y)
    }

    #[test]
    fn gnb_hand_moments() {
        let x = Matrix::from_rows(&[[0.0, 0.0], [2.0, 2.0]]);
        let m = fit_baseline(&x, &[0, 0], 1, &BaselineParams::new(BaselineKind::Gnb)).unwrap();
        let BaselineModel::Gnb { means, vars, log_priors } = m else { panic!() };
        assert_eq!(means.row(0), &[1.0, 1.0]);
        assert_eq!(vars.row(0), &[1.0, 1.0]);
        assert_eq!(log_priors, vec![0.0]);
    }

    #[test]
    fn gnb_symmetric_midpoint() {
        let x = Matrix::from_rows(&[[-2.0], [-1.0], [1.0], [2.0]]);
        let m = fit_baseline(&x, &[0, 0, 1, 1], 2, &BaselineParams::new(BaselineKind::Gnb)).unwrap();
        let p = predict_baseline(&m, &[0.0]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gnb_empty_class() {
        let x = Matrix::from_rows(&[[0.0], [1.0]]);
        assert_eq!(
            fit_baseline(&x, &[0, 2], 3, &BaselineParams::new(BaselineKind::Gnb)),
            Err(BaselineError::EmptyClass(1))
        );
    }

    #[test]
    fn gnb_floor_keeps_constant_feature_finite() {
        let x = Matrix::from_rows(&[[0.0, 5.0], [1.0, 5.0], [3.0, 5.0], [4.0, 5.0]]);
        let m = fit_baseline(&x, &[0, 0, 1, 1], 2, &BaselineParams::new(BaselineKind::Gnb)).unwrap();
        let p = predict_baseline(&m, &[2.0, 5.0]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn logreg_zero_epochs_is_uniform() {
        let (x, y) = blobs(4, 1);
        let p = BaselineParams { logreg_epochs: 0, ..BaselineParams::new(BaselineKind::LogReg) };
        let m = fit_baseline(&x, &y, 3, &p).unwrap();
        for probe in [[0.0, 0.0], [10.0, -3.0]] {
            assert!(predict_baseline(&m, &probe).unwrap().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        }
    }

    #[test]
    fn logreg_loss_non_increasing() {
        let (x, y) = blobs(20, 2);
        let p = BaselineParams { logreg_lr: 0.01, logreg_epochs: 300, ..BaselineParams::new(BaselineKind::LogReg) };
        let (_, trace) = fit_logreg_traced(&x, &y, 3, &p);
        for w in trace.windows(2) {
            assert!(w[1] <= w[0], "{} > {}", w[1], w[0]);
        }
        assert!(trace.last().unwrap() < &trace[0]);
    }

    #[test]
    fn knn_exact_match_and_oracle() {
        let x = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [5.0, 5.0], [6.0, 5.0]]);
        let y = [0, 0, 1, 1, 1];
        let k1 = fit_baseline(&x, &y, 2, &BaselineParams { knn_k: 1, ..BaselineParams::new(BaselineKind::Knn) }).unwrap();
        assert_eq!(predict_baseline(&k1, &[5.0, 5.0]).unwrap(), vec![0.0, 1.0]);

        let k3 = fit_baseline(&x, &y, 2, &BaselineParams { knn_k: 3, ..BaselineParams::new(BaselineKind::Knn) }).unwrap();
        let mut r = rng::seeded(3);
        for _ in 0..100 {
            let q = [r.gen_range(-1.0..7.0), r.gen_range(-1.0..7.0)];
            // Brute-force oracle: full sort by (distance, index).
            let mut all: Vec<(f64, usize)> =
                (0..5).map(|i| (((x.get(i, 0) - q[0]).powi(2) + (x.get(i, 1) - q[1]).powi(2)), i)).collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut want = [0.0; 2];
            for &(_, i) in &all[..3] {
                want[y[i]] += 1.0 / 3.0;
            }
            assert_eq!(predict_baseline(&k3, &q).unwrap(), want.to_vec());
        }
    }

    #[test]
    fn knn_distance_ties_prefer_lower_rows() {
        let x = Matrix::from_rows(&[[1.0], [-1.0], [1.0]]);
        assert_eq!(nearest_neighbours(&x, &[0.0], 2), vec![0, 1]);
        assert_eq!(nearest_neighbours(&x, &[0.0], 10), vec![0, 1, 2]);
    }

    #[test]
    fn width_and_param_errors() {
        let x = Matrix::from_rows(&[[0.0]]);
        let m = fit_baseline(&x, &[0], 1, &BaselineParams::new(BaselineKind::Knn)).unwrap();
        assert_eq!(predict_baseline(&m, &[0.0, 1.0]), Err(BaselineError::WidthMismatch { expected: 1, found: 2 }));
        let p = BaselineParams { knn_k: 0, ..BaselineParams::new(BaselineKind::Knn) };
        assert!(matches!(fit_baseline(&x, &[0], 1, &p), Err(BaselineError::InvalidParams(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn outputs_are_distributions(seed in any::<u64>(), kind in 0usize..3, probe in [-3.0f64..3.0, -3.0f64..3.0]) {
            let (x, y) = blobs(6, seed);
            let kind = [BaselineKind::Knn, BaselineKind::Gnb, BaselineKind::LogReg][kind];
            let p = BaselineParams { logreg_epochs: 20, ..BaselineParams::new(kind) };
            let m = fit_baseline(&x, &y, 3, &p).unwrap();
            let probs = predict_baseline(&m, &probe).unwrap();
            prop_assert!(probs.iter().all(|&v| v >= 0.0 && !v.is_nan()));
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn gnb_finite_within_ten_sigma(seed in any::<u64>(), t in [-10.0f64..10.0, -10.0f64..10.0]) {
            let (x, y) = blobs(6, seed);
            let m = fit_baseline(&x, &y, 3, &BaselineParams::new(BaselineKind::Gnb)).unwrap();
            let BaselineModel::Gnb { means, vars, .. } = &m else { unreachable!() };
            let q = [means.get(0, 0) + t[0] * vars.get(0, 0).sqrt(), means.get(0, 1) + t[1] * vars.get(0, 1).sqrt()];
            let probs = predict_baseline(&m, &q).unwrap();
            prop_assert!(probs.iter().all(|v| v.is_finite()));
        }

        #[test]
        fn knn_permutation_invariant(seed in any::<u64>(), probe in [-2.0f64..2.0, -2.0f64..2.0]) {
            let (x, y) = blobs(5, seed);
            let n = x.rows();
            let mut perm: Vec<usize> = (0..n).collect();
            let mut r = rng::seeded(seed ^ 1);
            for i in (1..n).rev() { perm.swap(i, r.gen_range(0..=i)); }
            let xp = x.select_rows(&perm);
            let yp: Vec<usize> = perm.iter().map(|&i| y[i]).collect();
            let p = BaselineParams::new(BaselineKind::Knn);
            let a = predict_baseline(&fit_baseline(&x, &y, 3, &p).unwrap(), &probe).unwrap();
            let b = predict_baseline(&fit_baseline(&xp, &yp, 3, &p).unwrap(), &probe).unwrap();
            // continuous random data: distance ties have probability zero
            prop_assert_eq!(a, b);
        }
    }
}
