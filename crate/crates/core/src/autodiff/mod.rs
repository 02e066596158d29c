//! Minimal dense tensors with reverse-mode differentiation, enough for the
//! message-passing networks and the learned distance in this crate.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use params::{Checkpoint, NamedTensor, ParamId, ParamSet, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use tape::{BatchStats, Gradients, RunningStats, Tape, Var, BATCH_NORM_EPS};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("shape {shape:?} needs {} values, got {len}", .shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("index {index} out of range 0..{bound}")]
    Index { index: usize, bound: usize },
    #[error("backward needs a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
