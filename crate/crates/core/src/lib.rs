//! Multi-class glitch classification for gravitational-wave detector metadata.
//!
//! The crate is organised bottom-up:
//!
//! - [`dataset`] parses and encodes the labelled glitch table and builds
//!   stratified folds.
//! - [`metrics`] turns predictions into confusion matrices and the five
//!   reported scores.
//! - [`trees`], [`forests`] and [`baselines`] are the classical learners.
//! - [`ensemble`] is the ShallowWaves hard-voting ensemble.
//! - [`nnet`] is a small double-precision neural engine; [`deepwaves`] builds
//!   the four-branch DeepWaves network on top of it.
//! - [`bench`] runs grid search and cross-validated benchmarks and owns the
//!   `.gwml` model artifact format.
//! - [`stream`] serves trained ensembles through a master/worker TCP protocol.

pub mod baselines;
pub mod bench;
pub mod dataset;
pub mod deepwaves;
pub mod ensemble;
pub mod forests;
pub mod matrix;
pub mod metrics;
pub mod nnet;
pub mod rng;
pub mod stream;
pub mod synth;
pub mod trees;

pub use dataset::{FeatureConfig, FeatureMatrix, GlitchRecord};
pub use matrix::Matrix;

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stabilised softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
