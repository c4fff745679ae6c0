//! Tree ensembles: bagged forests (random forest, extremely randomized
//! trees), SAMME AdaBoost, and softmax gradient boosting with the gbtree,
//! dart and gblinear boosters.

mod adaboost;
mod boost;

pub use adaboost::{fit_adaboost, fit_adaboost_traced, AdaBoostModel, AdaBoostParams, RoundTrace};
pub use boost::{
    fit_boosted, fit_boosted_traced, predict_boosted, BoostParams, BoostedBody, BoostedModel, Booster, WeightedTree,
};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::rng::{self, derive_seed};
use crate::trees::{self, Criterion, MaxFeatures, NodeRows, SplitMode, TreeError, TreeModel, TreeParams};

#[derive(Debug, Error, PartialEq)]
pub enum ForestError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("invalid ensemble parameters: {0}")]
    InvalidParams(String),
    #[error("every boosting round was discarded")]
    AllRoundsDiscarded,
    #[error("boosting scores became non-finite at round {0}")]
    NonFiniteScore(usize),
    #[error("row has {found} features, model expects {expected}")]
    WidthMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ForestKind {
    /// Random forest: bootstrap samples, exhaustive splits on random feature subsets.
    Rf,
    /// Extremely randomized trees: random cut points, full training set by default.
    Ert,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub kind: ForestKind,
    pub n_trees: usize,
    pub tree: TreeParams,
    pub bootstrap: bool,
    pub seed: u64,
}

impl ForestParams {
    pub fn rf(criterion: Criterion) -> Self {
        ForestParams {
            kind: ForestKind::Rf,
            n_trees: 100,
            tree: TreeParams { criterion, max_features: MaxFeatures::Sqrt, ..TreeParams::default() },
            bootstrap: true,
            seed: 0,
        }
    }

    pub fn ert(criterion: Criterion) -> Self {
        ForestParams {
            kind: ForestKind::Ert,
            n_trees: 100,
            tree: TreeParams {
                criterion,
                max_features: MaxFeatures::Sqrt,
                split_mode: SplitMode::ExtraRandom,
                ..TreeParams::default()
            },
            bootstrap: false,
            seed: 0,
        }
    }

    /// Tree parameters with the split mode dictated by the forest kind.
    pub fn effective_tree(&self) -> TreeParams {
        let split_mode = match self.kind {
            ForestKind::Rf => SplitMode::Exhaustive,
            ForestKind::Ert => SplitMode::ExtraRandom,
        };
        TreeParams { split_mode, ..self.tree }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<TreeModel>,
    pub n_classes: usize,
    pub n_features: usize,
}

/// Fits `n_trees` trees. Tree `i` gets seed `derive_seed(seed, i)` for both
/// its bootstrap draw and its split randomness, so the result does not
/// depend on how the work is scheduled.
pub fn fit_forest(
    x: &Matrix,
    labels: &[usize],
    n_classes: usize,
    params: &ForestParams,
) -> Result<ForestModel, ForestError> {
    if params.n_trees == 0 {
        return Err(ForestError::InvalidParams("n_trees must be >= 1".into()));
    }
    if x.rows() == 0 {
        return Err(TreeError::EmptyTrainingSet.into());
    }
    let base = params.effective_tree();
    base.validate(x.cols())?;
    let all: Vec<usize> = (0..x.rows()).collect();
    let presorted = NodeRows::new(x, &all);
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(params.seed, i as u64);
            let root = if params.bootstrap {
                let mut r = rng::seeded(derive_seed(seed, u64::MAX));
                let mut counts = vec![0u32; x.rows()];
                for _ in 0..x.rows() {
                    counts[r.gen_range(0..x.rows())] += 1;
                }
                presorted.expand(&counts)
            } else {
                presorted.expand(&vec![1; x.rows()])
            };
            let tp = TreeParams { seed, ..base };
            trees::fit_tree_presorted(x, labels, n_classes, root, None, &tp)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ForestModel { trees, n_classes, n_features: x.cols() })
}

/// Mean of the member trees' class probabilities.
pub fn predict_forest(model: &ForestModel, row: &[f64]) -> Result<Vec<f64>, ForestError> {
    if row.len() != model.n_features {
        return Err(ForestError::WidthMismatch { expected: model.n_features, found: row.len() });
    }
    let mut acc = vec![0.0; model.n_classes];
    for t in &model.trees {
        let counts = t.leaf_counts(row);
        let total: f64 = counts.iter().sum();
        for (a, c) in acc.iter_mut().zip(counts) {
            *a += c / total;
        }
    }
    let n = model.trees.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trees::{fit_tree, predict_proba_tree, Node};
    use proptest::prelude::*;

    fn blobs(n_per: usize, seed: u64) -> (Matrix, Vec<usize>) {
        let mut r = rng::seeded(seed);
        let centers = [[0.0, 0.0], [3.0, 3.0], [0.0, 4.0]];
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..n_per {
                rows.push([center[0] + r.gen_range(-1.2..1.2), center[1] + r.gen_range(-1.2..1.2)]);
                labels.push(c);
            }
        }
        (Matrix::from_rows(&rows), labels)
    }

    #[test]
    fn forest_of_one_equals_tree() {
        let (x, y) = blobs(20, 1);
        let params = ForestParams {
            kind: ForestKind::Rf,
            n_trees: 1,
            tree: TreeParams::cart(),
            bootstrap: false,
            seed: 77,
        };
        let forest = fit_forest(&x, &y, 3, &params).unwrap();
        let tree = fit_tree(&x, &y, 3, &TreeParams::cart()).unwrap();
        assert_eq!(forest.trees[0].nodes, tree.nodes);
        let mut r = rng::seeded(5);
        for _ in 0..200 {
            let probe = [r.gen_range(-2.0..5.0), r.gen_range(-2.0..6.0)];
            assert_eq!(predict_forest(&forest, &probe).unwrap(), predict_proba_tree(&tree, &probe).unwrap());
        }
    }

    #[test]
    fn seeded_forests_are_reproducible() {
        let (x, y) = blobs(15, 2);
        for p in [ForestParams::rf(Criterion::Gini), ForestParams::ert(Criterion::Entropy)] {
            let p = ForestParams { n_trees: 12, seed: 9, ..p };
            let a = fit_forest(&x, &y, 3, &p).unwrap();
            let b = fit_forest(&x, &y, 3, &p).unwrap();
            assert_eq!(a, b);
            let c = fit_forest(&x, &y, 3, &ForestParams { seed: 10, ..p }).unwrap();
            assert_ne!(a, c);
        }
    }

    #[test]
    fn soft_vote_of_single_leaves() {
        let leaf = |c: Vec<f64>| TreeModel { nodes: vec![Node::Leaf(c)], n_classes: 2, n_features: 1 };
        let m = ForestModel { trees: vec![leaf(vec![1.0, 0.0]), leaf(vec![1.0, 0.0])], n_classes: 2, n_features: 1 };
        assert_eq!(predict_forest(&m, &[0.0]).unwrap(), vec![1.0, 0.0]);
        let m = ForestModel { trees: vec![leaf(vec![1.0, 0.0]), leaf(vec![0.0, 1.0])], n_classes: 2, n_features: 1 };
        assert_eq!(predict_forest(&m, &[0.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(
            predict_forest(&m, &[0.0, 1.0]),
            Err(ForestError::WidthMismatch { expected: 1, found: 2 })
        );
    }

    #[test]
    fn forests_fit_blobs() {
        let (x, y) = blobs(30, 3);
        for p in [ForestParams::rf(Criterion::Gini), ForestParams::ert(Criterion::Gini)] {
            let m = fit_forest(&x, &y, 3, &ForestParams { n_trees: 20, ..p }).unwrap();
            let acc = (0..x.rows())
                .filter(|&i| crate::argmax(&predict_forest(&m, x.row(i)).unwrap()) == y[i])
                .count() as f64
                / x.rows() as f64;
            assert!(acc > 0.95, "{:?} acc {acc}", p.kind);
        }
    }

    #[test]
    fn ert_forces_extra_random_splits() {
        let p = ForestParams { kind: ForestKind::Ert, ..ForestParams::rf(Criterion::Gini) };
        assert_eq!(p.effective_tree().split_mode, SplitMode::ExtraRandom);
        assert!(matches!(
            fit_forest(&Matrix::zeros(2, 1), &[0, 0], 1, &ForestParams { n_trees: 0, ..p }),
            Err(ForestError::InvalidParams(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn forest_probabilities_sum_to_one(seed in any::<u64>(), probe in [-3.0f64..6.0, -3.0f64..7.0]) {
            let (x, y) = blobs(8, seed);
            let p = ForestParams { n_trees: 5, seed, ..ForestParams::rf(Criterion::Gini) };
            let m = fit_forest(&x, &y, 3, &p).unwrap();
            let probs = predict_forest(&m, &probe).unwrap();
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
