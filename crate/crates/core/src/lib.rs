//! Projected stochastic gradient descent over the spectrahedron
//! `{X ⪰ 0, Tr X = 1}` where every projection is computed from a truncated
//! eigendecomposition and checked by a rank certificate.

// Comparisons are written `!(x > 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod problems;
pub mod projection;
pub mod sgd;

pub use error::{Error, Result};
