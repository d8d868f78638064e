//! Minimal dense numeric core with reverse-mode automatic differentiation.
//!
//! The operation set covers exactly what the training graph needs: dense
//! matmul, row normalization, segment pooling, neighborhood averaging,
//! gather/concat plumbing, and numerically stable cross-entropy / BCE heads.
//! Everything is 64-bit and reductions run in a fixed sequential order, so
//! results are bit-reproducible and comparable against scalar-loop oracles.

mod gradcheck;
mod param;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use param::{ParamSet, Parameter};
pub use tape::{MergeSource, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

/// Default guard for row normalization.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum AdError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("index out of range in {op}: {detail}")]
    IndexOutOfRange { op: &'static str, detail: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("label must be 0 or 1, got {0}")]
    NonBinaryLabel(f64),

    #[error("duplicate parameter name: {0}")]
    DuplicateParameter(String),

    #[error("function is not deterministic across probe evaluations")]
    NonDeterministic,
}

pub type AdResult<T> = std::result::Result<T, AdError>;
