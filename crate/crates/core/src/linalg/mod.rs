//! Matrix representations and eigensolvers.

mod dense;
mod eigen;
mod factor;
mod lanczos;
mod operator;
pub mod random;
mod sparse;

pub use dense::SymmetricMatrix;
pub use eigen::{full_eigendecomposition, EigenPairs};
pub use factor::{FactorizedPsd, DEFAULT_DENSE_CAP};
pub use lanczos::{lanczos_topk, LanczosConfig};
pub use operator::{CompositeOperator, SymmetricOperator};
pub use sparse::{SparseAccumulator, SparseSymmetric};
