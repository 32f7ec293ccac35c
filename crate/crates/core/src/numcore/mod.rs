//! Dense numeric kernel for the neural models: row-major matrices, a
//! define-by-run reverse-mode tape, a reproducible PRNG and a
//! finite-difference gradient checker.

mod fdcheck;
mod matrix;
mod rng;
mod tape;

pub use fdcheck::{fd_check, fd_check_with, FdReport};
pub use matrix::Matrix;
pub use rng::Rng;
pub use tape::{CustomOp, Gradients, NodeId, Tape, LAYER_NORM_EPS};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("backward requires a scalar output, got {rows}x{cols}")]
    NonScalarOutput { rows: usize, cols: usize },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("invalid argument: {0}")]
    Invalid(String),
}
