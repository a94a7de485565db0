//! Neural solvers for ordinary and partial differential equations whose
//! collocation points are drawn by an adversarially trained sampler network.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: scalar tape with nested derivative jets,
//! - [`neural`]: dense networks, Glorot initialization and Adam,
//! - [`problems`]: the benchmark equations and their trial functions,
//! - [`sampling`]: adversarial and baseline collocation schemes, kd-tree and
//!   the nearest-neighbour spread penalty,
//! - [`training`]: the alternating solver/sampler loop,
//! - [`evaluation`]: solution-quality metrics and seeded scheme comparisons.

// Jet code walks several coefficient arrays by order, and `!(a < b)` checks
// are how NaN gets rejected.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod evaluation;
pub mod neural;
pub mod problems;
pub mod sampling;
pub mod training;
