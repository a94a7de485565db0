//! Scalar reverse-mode automatic differentiation over a recorded tape, with
//! truncated Taylor jets recorded on the same tape.
//!
//! Jets give derivatives of a network output with respect to its inputs;
//! because each jet coefficient is an ordinary tape node, a single reverse
//! sweep then differentiates those input derivatives with respect to the
//! network parameters or the sampled points.

mod jet;
mod tape;

pub use jet::{Jet, MAX_JET_ORDER};
pub use tape::{GradientMap, NodeRef, Op, Tape};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("node {node}: {op:?} is undefined at operand value {value}")]
    Domain { node: usize, op: Op, value: f64 },
    #[error("{op:?} expects {expected} operands, got {got}")]
    Arity { op: Op, expected: usize, got: usize },
    #[error("{0:?} needs a constant argument")]
    MissingConstant(Op),
    #[error("node {0} is not on this tape")]
    InvalidNode(usize),
    #[error("non-finite value or adjoint at node {node}")]
    NonFinite { node: usize },
    #[error("unsupported jet order {0} (maximum is 3)")]
    UnsupportedOrder(usize),
    #[error("jet order mismatch: expected {expected}, got {got}")]
    OrderMismatch { expected: usize, got: usize },
}
