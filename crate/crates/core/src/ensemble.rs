//! ShallowWaves: hard voting over a random forest, an extra-trees forest and
//! a gradient-boosted tree model, all grown with CART.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forests::{
    fit_boosted, fit_forest, predict_boosted, predict_forest, BoostParams, BoostedModel, Booster, ForestError,
    ForestModel, ForestParams,
};
use crate::matrix::Matrix;
use crate::rng::derive_seed;
use crate::trees::Criterion;

#[derive(Debug, Error, PartialEq)]
pub enum EnsembleError {
    #[error("{member}: {source}")]
    Member { member: &'static str, source: ForestError },
    #[error("row has {found} features, model expects {expected}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("no member votes to combine")]
    NoVotes,
}

pub const MEMBER_NAMES: [&str; 3] = ["rf-cart", "ert-cart", "xgb-gbtree"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShallowWavesParams {
    pub rf: ForestParams,
    pub ert: ForestParams,
    pub xgb: BoostParams,
    pub seed: u64,
}

impl Default for ShallowWavesParams {
    fn default() -> Self {
        ShallowWavesParams {
            rf: ForestParams::rf(Criterion::Gini),
            ert: ForestParams::ert(Criterion::Gini),
            xgb: BoostParams::new(Booster::GbTree),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShallowWavesModel {
    pub rf: ForestModel,
    pub ert: ForestModel,
    pub xgb: BoostedModel,
    pub n_classes: usize,
    pub n_features: usize,
}

/// One member's contribution to a vote.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberVote {
    pub class: usize,
    pub probs: Vec<f64>,
}

impl MemberVote {
    pub fn from_probs(probs: Vec<f64>) -> Self {
        MemberVote { class: crate::argmax(&probs), probs }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoteOutcome {
    pub class: usize,
    pub votes: Vec<usize>,
    pub mean_probs: Vec<f64>,
}

/// Plurality vote. Classes sharing the top vote count are separated by
/// mean member probability, then by lowest class index. With a single
/// voter this reduces to that voter's class.
pub fn hard_vote(members: &[MemberVote], n_classes: usize) -> Result<VoteOutcome, EnsembleError> {
    if members.is_empty() {
        return Err(EnsembleError::NoVotes);
    }
    let mut counts = vec![0usize; n_classes];
    let mut mean_probs = vec![0.0; n_classes];
    for m in members {
        counts[m.class] += 1;
        for (acc, p) in mean_probs.iter_mut().zip(&m.probs) {
            *acc += p;
        }
    }
    let n = members.len() as f64;
    mean_probs.iter_mut().for_each(|p| *p /= n);
    let top = *counts.iter().max().expect("n_classes > 0");
    let mut best: Option<usize> = None;
    for c in (0..n_classes).filter(|&c| counts[c] == top) {
        match best {
            Some(b) if mean_probs[c] <= mean_probs[b] => {}
            _ => best = Some(c),
        }
    }
    Ok(VoteOutcome {
        class: best.expect("some class holds the top count"),
        votes: members.iter().map(|m| m.class).collect(),
        mean_probs,
    })
}

/// Fits the three members on the same rows; member `i` draws its seed from
/// `derive_seed(params.seed, i)`.
pub fn fit_shallowwaves(
    x: &Matrix,
    labels: &[usize],
    n_classes: usize,
    params: &ShallowWavesParams,
) -> Result<ShallowWavesModel, EnsembleError> {
    let wrap = |member| move |source| EnsembleError::Member { member, source };
    let rf_p = ForestParams { seed: derive_seed(params.seed, 0), ..params.rf };
    let ert_p = ForestParams { seed: derive_seed(params.seed, 1), ..params.ert };
    let xgb_p = BoostParams { seed: derive_seed(params.seed, 2), ..params.xgb };
    let (rf, (ert, xgb)) = rayon::join(
        || fit_forest(x, labels, n_classes, &rf_p),
        || rayon::join(|| fit_forest(x, labels, n_classes, &ert_p), || fit_boosted(x, labels, n_classes, &xgb_p)),
    );
    Ok(ShallowWavesModel {
        rf: rf.map_err(wrap(MEMBER_NAMES[0]))?,
        ert: ert.map_err(wrap(MEMBER_NAMES[1]))?,
        xgb: xgb.map_err(wrap(MEMBER_NAMES[2]))?,
        n_classes,
        n_features: x.cols(),
    })
}

impl ShallowWavesModel {
    /// Probability vector of member `slot` (0 = rf, 1 = ert, 2 = xgb).
    pub fn member_probs(&self, slot: usize, row: &[f64]) -> Result<Vec<f64>, EnsembleError> {
        if row.len() != self.n_features {
            return Err(EnsembleError::WidthMismatch { expected: self.n_features, found: row.len() });
        }
        let r = match slot {
            0 => predict_forest(&self.rf, row),
            1 => predict_forest(&self.ert, row),
            _ => predict_boosted(&self.xgb, row),
        };
        r.map_err(|source| EnsembleError::Member { member: MEMBER_NAMES[slot.min(2)], source })
    }
}

pub fn predict_hard_vote(model: &ShallowWavesModel, row: &[f64]) -> Result<VoteOutcome, EnsembleError> {
    let members = (0..3).map(|s| model.member_probs(s, row).map(MemberVote::from_probs)).collect::<Result<Vec<_>, _>>()?;
    hard_vote(&members, model.n_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn mv(probs: &[f64]) -> MemberVote {
        MemberVote::from_probs(probs.to_vec())
    }

    #[test]
    fn majority_and_unanimity() {
        let a = mv(&[0.6, 0.3, 0.1]);
        let b = mv(&[0.1, 0.8, 0.1]);
        assert_eq!(hard_vote(&[a.clone(), a.clone(), b.clone()], 3).unwrap().class, 0);
        assert_eq!(hard_vote(&[b.clone(), a.clone(), a.clone()], 3).unwrap().class, 0);
        let out = hard_vote(&[a.clone(), a.clone(), a], 3).unwrap();
        assert_eq!((out.class, out.votes), (0, vec![0, 0, 0]));
    }

    #[test]
    fn three_way_tie_uses_mean_probability() {
        // Member tables chosen so the means are 0.31 / 0.40 / 0.29.
        let m = [mv(&[0.45, 0.35, 0.20]), mv(&[0.20, 0.50, 0.30]), mv(&[0.28, 0.35, 0.37])];
        let out = hard_vote(&m, 3).unwrap();
        assert_eq!(out.votes, vec![0, 1, 2]);
        for (got, want) in out.mean_probs.iter().zip([0.31, 0.40, 0.29]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(out.class, 1);
    }

    #[test]
    fn exact_tie_falls_back_to_lowest_index() {
        let m = [
            MemberVote { class: 2, probs: vec![0.0, 0.0, 0.5, 0.5] },
            MemberVote { class: 3, probs: vec![0.0, 0.0, 0.5, 0.5] },
        ];
        assert_eq!(hard_vote(&m, 4).unwrap().class, 2);
        assert_eq!(hard_vote(&[], 4), Err(EnsembleError::NoVotes));
    }

    fn blobs(seed: u64) -> (Matrix, Vec<usize>) {
        let mut r = rng::seeded(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for c in 0..3 {
            for _ in 0..15 {
                rows.push([c as f64 * 2.0 + r.gen_range(-1.3..1.3), r.gen_range(-1.0..1.0)]);
                y.push(c);
            }
        }
        (Matrix::from_rows(&rows), y)
    }

    fn small_params(seed: u64) -> ShallowWavesParams {
        let d = ShallowWavesParams::default();
        ShallowWavesParams {
            rf: ForestParams { n_trees: 10, ..d.rf },
            ert: ForestParams { n_trees: 10, ..d.ert },
            xgb: BoostParams { n_rounds: 10, ..d.xgb },
            seed,
        }
    }

    #[test]
    fn single_class_training_agrees() {
        let x = Matrix::from_rows(&[[0.0, 1.0], [1.0, 2.0], [2.0, 0.0]]);
        let m = fit_shallowwaves(&x, &[1, 1, 1], 3, &small_params(0)).unwrap();
        let out = predict_hard_vote(&m, &[5.0, 5.0]).unwrap();
        assert_eq!(out.votes, vec![1, 1, 1]);
        assert_eq!(out.class, 1);
    }

    #[test]
    fn seeded_fits_replay() {
        let (x, y) = blobs(1);
        let a = fit_shallowwaves(&x, &y, 3, &small_params(5)).unwrap();
        let b = fit_shallowwaves(&x, &y, 3, &small_params(5)).unwrap();
        let mut r = rng::seeded(2);
        for _ in 0..50 {
            let q = [r.gen_range(-2.0..6.0), r.gen_range(-1.5..1.5)];
            assert_eq!(predict_hard_vote(&a, &q).unwrap(), predict_hard_vote(&b, &q).unwrap());
        }
        assert_eq!(
            predict_hard_vote(&a, &[0.0]),
            Err(EnsembleError::WidthMismatch { expected: 2, found: 1 })
        );
    }

    fn vote_strategy() -> impl Strategy<Value = Vec<MemberVote>> {
        prop::collection::vec(prop::collection::vec(0.01f64..1.0, 4), 3).prop_map(|raw| {
            raw.into_iter()
                .map(|v| {
                    let s: f64 = v.iter().sum();
                    MemberVote::from_probs(v.into_iter().map(|p| p / s).collect())
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn vote_conservation_and_majority(members in vote_strategy()) {
            let out = hard_vote(&members, 4).unwrap();
            prop_assert_eq!(out.votes.len(), 3);
            prop_assert!(out.votes.iter().all(|&c| c < 4));
            for c in 0..4 {
                if out.votes.iter().filter(|&&v| v == c).count() >= 2 {
                    prop_assert_eq!(out.class, c);
                }
            }
        }

        #[test]
        fn votes_ignore_positive_rescaling(members in vote_strategy(), scales in prop::collection::vec(0.1f64..10.0, 3)) {
            let rescaled: Vec<MemberVote> = members
                .iter()
                .zip(&scales)
                .map(|(m, s)| MemberVote::from_probs(m.probs.iter().map(|p| p * s).collect()))
                .collect();
            let a = hard_vote(&members, 4).unwrap();
            let b = hard_vote(&rescaled, 4).unwrap();
            prop_assert_eq!(&a.votes, &b.votes);
            if a.votes.iter().any(|c| a.votes.iter().filter(|&v| v == c).count() >= 2) {
                prop_assert_eq!(a.class, b.class);
            }
        }
    }
}
