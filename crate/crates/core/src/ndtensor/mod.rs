//! Dense tensors, reverse-mode differentiation, Adam, and checkpoints.

mod adam;
pub mod checkpoint;
mod graph;
mod tensor;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CheckpointError, ParamBlock};
pub use graph::{Graph, Var, LAYER_NORM_EPS, MASKED_SCORE};
pub use tensor::{entropy, softmax_scaled, Tensor};

pub(crate) use tensor::l2_norm;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("temperature alpha must be positive, got {0}")]
    NonPositiveAlpha(f64),
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalarLoss(Vec<usize>),
    #[error("graph was already differentiated")]
    GraphAlreadyConsumed,
    #[error("parameter {0} has no gradient")]
    MissingGrad(usize),
    #[error("id {id} out of range (limit {limit})")]
    IdOutOfRange { id: usize, limit: usize },
}
