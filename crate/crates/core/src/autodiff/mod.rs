//! Reverse-mode automatic differentiation over small dense tensors.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its forward
//! value and the ids of its inputs, so node order is a topological order and
//! [`Graph::backward`] walks it in reverse. Leaves are either parameters
//! (named, differentiated) or constants (never differentiated, and nothing
//! computed only from constants is differentiated either).
//!
//! There is no implicit broadcasting. Row-wise bias addition is its own op
//! ([`Graph::add_row`]), and elementwise ops require identical shapes.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::check_gradients;
pub use graph::{Gradients, Graph, Var, LOG_FLOOR};
pub use tensor::Tensor;

use alloc::vec::Vec;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tensor shape {shape:?} does not match {len} values")]
    BadLength { shape: Vec<usize>, len: usize },
    #[error("{op}: index {index} out of range for extent {extent}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        extent: usize,
    },
    #[error("{op}: unsupported rank {rank}")]
    BadRank { op: &'static str, rank: usize },
    #[error("finite-difference epsilon {0} outside [1e-8, 1e-3]")]
    BadEpsilon(f64),
}
