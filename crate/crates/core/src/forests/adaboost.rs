use serde::{Deserialize, Serialize};

use super::ForestError;
use crate::matrix::Matrix;
use crate::rng::derive_seed;
use crate::trees::{self, NodeRows, TreeModel, TreeParams};

/// Weighted errors at or below this are treated as perfect fits.
pub const EPS_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaBoostParams {
    pub n_rounds: usize,
    pub tree: TreeParams,
    pub seed: u64,
}

impl Default for AdaBoostParams {
    fn default() -> Self {
        AdaBoostParams { n_rounds: 50, tree: TreeParams::cart(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaBoostModel {
    pub learners: Vec<(TreeModel, f64)>,
    pub n_classes: usize,
    pub n_features: usize,
}

/// Per-round diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrace {
    pub error: f64,
    pub alpha: Option<f64>,
    /// Sum of the example weights after the round's update.
    pub weight_sum: f64,
}

/// SAMME learner weight for a (floored) weighted error.
pub fn samme_alpha(error: f64, n_classes: usize) -> f64 {
    let e = error.max(EPS_FLOOR);
    ((1.0 - e) / e).ln() + ((n_classes - 1) as f64).ln()
}

pub fn fit_adaboost(
    x: &Matrix,
    labels: &[usize],
    n_classes: usize,
    params: &AdaBoostParams,
) -> Result<AdaBoostModel, ForestError> {
    fit_adaboost_traced(x, labels, n_classes, params).map(|(m, _)| m)
}

/// SAMME boosting. A round whose weighted error reaches chance level
/// (1 − 1/K) is discarded and the weights restart from uniform; a round that
/// fits the weighted data perfectly ends training.
pub fn fit_adaboost_traced(
    x: &Matrix,
    labels: &[usize],
    n_classes: usize,
    params: &AdaBoostParams,
) -> Result<(AdaBoostModel, Vec<RoundTrace>), ForestError> {
    if n_classes < 2 {
        return Err(ForestError::InvalidParams("AdaBoost needs at least 2 classes".into()));
    }
    if params.n_rounds == 0 {
        return Err(ForestError::InvalidParams("n_rounds must be >= 1".into()));
    }
    let n = x.rows();
    if n == 0 {
        return Err(trees::TreeError::EmptyTrainingSet.into());
    }
    let all: Vec<usize> = (0..n).collect();
    let root = NodeRows::new(x, &all);
    let uniform = 1.0 / n as f64;
    let mut w = vec![uniform; n];
    let chance = 1.0 - 1.0 / n_classes as f64;
    let mut learners = Vec::new();
    let mut trace = Vec::new();

    for t in 0..params.n_rounds {
        let tp = TreeParams { seed: derive_seed(params.seed, t as u64), ..params.tree };
        let tree = trees::fit_tree_presorted(x, labels, n_classes, root.clone(), Some(&w), &tp)?;
        let miss: Vec<bool> = (0..n).map(|i| crate::argmax(tree.leaf_counts(x.row(i))) != labels[i]).collect();
        let error: f64 = w.iter().zip(&miss).filter(|(_, &m)| m).map(|(w, _)| w).sum::<f64>() / w.iter().sum::<f64>();
        if error >= chance {
            w.fill(uniform);
            trace.push(RoundTrace { error, alpha: None, weight_sum: 1.0 });
            continue;
        }
        let alpha = samme_alpha(error, n_classes);
        learners.push((tree, alpha));
        if error <= EPS_FLOOR {
            trace.push(RoundTrace { error, alpha: Some(alpha), weight_sum: w.iter().sum() });
            break;
        }
        let boost = alpha.exp();
        for (wi, &m) in w.iter_mut().zip(&miss) {
            if m {
                *wi *= boost;
            }
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|wi| *wi /= total);
        trace.push(RoundTrace { error, alpha: Some(alpha), weight_sum: w.iter().sum() });
    }
    if learners.is_empty() {
        return Err(ForestError::AllRoundsDiscarded);
    }
    Ok((AdaBoostModel { learners, n_classes, n_features: x.cols() }, trace))
}

impl AdaBoostModel {
    /// α-weighted vote shares, normalised to sum to 1.
    pub fn predict_proba(&self, row: &[f64]) -> Result<Vec<f64>, ForestError> {
        if row.len() != self.n_features {
            return Err(ForestError::WidthMismatch { expected: self.n_features, found: row.len() });
        }
        let mut votes = vec![0.0; self.n_classes];
        let mut total = 0.0;
        for (tree, alpha) in &self.learners {
            votes[crate::argmax(tree.leaf_counts(row))] += alpha;
            total += alpha;
        }
        votes.iter_mut().for_each(|v| *v /= total);
        Ok(votes)
    }
}
