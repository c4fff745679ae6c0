//! Small double-precision neural-network engine: layers with exact
//! backpropagation (including through time for LSTMs), a branched graph
//! type, Adam/SGD training and finite-difference gradient checking.

mod dd;
mod eval;
mod gradcheck;
mod layers;
mod lstm;
mod network;
mod tensor;
mod train;
pub mod zoo;

pub use gradcheck::{grad_check, grad_check_state, relative_error};
pub use layers::LayerSpec;
pub use network::{ForwardCache, NetworkSpec, NetworkState};
pub use tensor::Tensor;
pub use train::{dataset_loss, loss_softmax_ce, train, Optimizer, TrainConfig};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid network specification: {0}")]
    InvalidSpec(String),
    #[error("non-finite activation")]
    NonFiniteActivation,
    #[error("forward cache does not belong to this network")]
    MissingCache,
    #[error("training loss became non-finite in epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("row has {found} features, network expects {expected}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("no branch {0}")]
    InvalidBranch(usize),
    #[error("label {label} outside 0..{n_classes}")]
    LabelOutOfRange { label: usize, n_classes: usize },
}
