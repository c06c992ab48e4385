//! Reverse-mode differentiation over dense matrices and fixed sparse
//! matrices: enough machinery to train the shape generator and to optimize
//! the fitting objectives by gradient descent, and nothing more.

mod gradcheck;
mod param;
mod sparse;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_coords};
pub use param::{adam_step, AdamState, Param, ParamId, ParamSet, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use sparse::SparseMat;
pub use tape::{EdgeSet, Precision, Tape, Value};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch {}x{} vs {}x{}", left.0, left.1, right.0, right.1)]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("backward needs a scalar loss, got {}x{}", shape.0, shape.1)]
    NonScalarLoss { shape: (usize, usize) },
    #[error("values belong to different tapes")]
    TapeMismatch,
    #[error("tape is empty")]
    EmptyTape,
    #[error("duplicate sparse triplet at ({row}, {col})")]
    DuplicateTriplet { row: u32, col: u32 },
    #[error("sparse triplet ({row}, {col}) outside {rows}x{cols}")]
    TripletOutOfRange {
        row: u32,
        col: u32,
        rows: usize,
        cols: usize,
    },
    #[error("non-finite value in {op}")]
    NonFinite { op: &'static str },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}
