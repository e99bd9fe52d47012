//! Objectives over the spectrahedron together with their stochastic
//! first-order oracles.

mod completion;
mod movielens;
mod synthetic;

pub use completion::{BipartiteOperator, MatrixCompletion, ObservedEntry};
pub use movielens::{movielens_parse, movielens_read, Ratings};
pub use synthetic::{SyntheticDocument, SyntheticInstance, SyntheticParams, DEFAULT_LEVEL};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{FactorizedPsd, SparseSymmetric, SymmetricMatrix};

/// Random source handed to oracles.
pub type OracleRng = ChaCha8Rng;

/// Smoothness `beta`, Frobenius bound `g` and spectral bound `b` on every
/// oracle draw, and `sigma²` bounding the variance of a single draw.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleConstants {
    pub beta: f64,
    pub g: f64,
    pub b: f64,
    pub sigma: f64,
}

/// A gradient of the form `c·X + D + S` where `X` is the point it was
/// evaluated at, `D` dense and `S` sparse. Keeping `X` symbolic lets the
/// SGD step fold it into the low-rank part of the operator.
#[derive(Clone, Debug, Default)]
pub struct Gradient {
    pub iterate_coeff: f64,
    pub dense: Option<SymmetricMatrix>,
    pub sparse: Option<SparseSymmetric>,
}

impl Gradient {
    pub fn sparse(s: SparseSymmetric) -> Self {
        Self {
            sparse: Some(s),
            ..Self::default()
        }
    }

    /// Dense matrix of this gradient at the point `x` it was taken at.
    pub fn to_dense(&self, x: &FactorizedPsd) -> Result<SymmetricMatrix> {
        let mut m = SymmetricMatrix::zeros(x.n())?;
        if self.iterate_coeff != 0.0 {
            m = m.add_scaled(&x.to_dense()?, self.iterate_coeff)?;
        }
        if let Some(d) = &self.dense {
            m = m.add_scaled(d, 1.0)?;
        }
        if let Some(s) = &self.sparse {
            m = m.add_scaled(&s.to_dense(), 1.0)?;
        }
        Ok(m)
    }
}

pub trait Problem: Send + Sync {
    /// Side length of the spectrahedron.
    fn dim(&self) -> usize;

    fn constants(&self) -> OracleConstants;

    fn objective(&self, x: &FactorizedPsd) -> f64;

    fn full_gradient(&self, x: &FactorizedPsd) -> Gradient;

    /// Average of `batch` independent oracle draws at `x`.
    fn sample_gradient(&self, x: &FactorizedPsd, batch: usize, rng: &mut OracleRng) -> Gradient;

    /// A vector, linear in `x`, from which the objective can be evaluated.
    /// Averaging summaries averages iterates exactly.
    fn linear_summary(&self, x: &FactorizedPsd) -> Vec<f64>;

    fn objective_from_summary(&self, summary: &[f64]) -> f64;

    fn optimum(&self) -> Option<&FactorizedPsd> {
        None
    }

    fn optimal_value(&self) -> Option<f64> {
        None
    }
}
