//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] is built per forward pass. Every operation checks shapes and
//! rejects non-finite outputs, so a NaN surfaces at the op that produced it
//! rather than in the optimizer.

mod adam;
pub mod gradcheck;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use tape::{Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

use crate::linalg::LinalgError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape {0:?} has a zero dimension")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected a rank-2 tensor, got shape {shape:?}")]
    Rank { op: &'static str, shape: Vec<usize> },
    #[error("{op}: invalid axis {axis}")]
    InvalidAxis { op: &'static str, axis: usize },
    #[error("slice {start}..{} out of bounds for extent {extent}", start + len)]
    SliceBounds { start: usize, len: usize, extent: usize },
    #[error("{op}: expected {expected} inputs, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward needs a single-element output, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("variable belongs to a different tape")]
    ForeignVar,
    #[error(transparent)]
    Factorization(#[from] LinalgError),
    #[error("parameter {0} has no gradient")]
    MissingGrad(usize),
    #[error("optimizer state expects {expected}, got {got}")]
    StateMismatch { expected: usize, got: usize },
    #[error("invalid optimizer hyperparameters: {0}")]
    InvalidHyperparameter(String),
}
