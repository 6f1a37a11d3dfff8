//! Numeric building blocks: dense matrices, a reverse-mode tape, seeded
//! random streams and chi-square tail probabilities.

mod linalg;
mod matrix;
mod rng;
mod special;
pub mod tape;

pub use linalg::cholesky_solve;
pub use matrix::{dot, norm, squared_distance, Matrix};
pub use rng::Rng;
pub use special::{chi2_sf, gamma_q};
pub use tape::{BatchStats, Gradients, PairKind, PairTerm, Tape, Var};

/// Denominator floor for row normalization.
pub const NORM_EPS: f64 = 1e-12;
