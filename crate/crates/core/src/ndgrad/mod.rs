//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! Operations are recorded on a [`Tape`] as they execute. Every primitive
//! writes exactly one new node, so the tape is topologically ordered by
//! construction and [`Tape::backward`] is a single reverse sweep.
//!
//! Only the primitives the ranking model needs are provided: matrix product,
//! valid 1-D convolution, masked global max pooling over time, elementwise
//! arithmetic and activations, feature-axis concatenation, row-wise softmax,
//! and fused simple-RNN / LSTM cells.

mod real;
mod tape;
mod tensor;

pub use real::{gemm, Real};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GradError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {detail}")]
    InvalidInput { op: &'static str, detail: String },
    #[error("masked_max_pool: sequence {row} has no valid timestep")]
    EmptyMask { row: usize },
    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("variable does not belong to this tape")]
    ForeignVar,
    #[error("invalid tensor shape {shape:?}: extents must be positive")]
    BadShape { shape: Vec<usize> },
    #[error("tensor of shape {shape:?} cannot hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
}
