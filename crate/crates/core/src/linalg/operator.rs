use nalgebra::{DMatrix, DVector};

use super::{FactorizedPsd, SparseSymmetric, SymmetricMatrix, DEFAULT_DENSE_CAP};
use crate::error::{contract, Error, Result};

/// Anything that can apply a symmetric linear map to a vector.
pub trait SymmetricOperator {
    fn dim(&self) -> usize;

    /// Writes `A x` into `y`. Both have length `dim()`.
    fn apply(&self, x: &DVector<f64>, y: &mut DVector<f64>);
}

impl SymmetricOperator for SymmetricMatrix {
    fn dim(&self) -> usize {
        self.n()
    }

    fn apply(&self, x: &DVector<f64>, y: &mut DVector<f64>) {
        y.gemv(1.0, self.as_matrix(), x, 0.0);
    }
}

/// Implicit symmetric operator `a·X + b·S + c·D` with a low-rank PSD part,
/// a sparse part and a dense part, each optional. This is the matrix
/// `X_t − η ∇̂_t` handed to the eigensolver on every SGD step.
#[derive(Clone, Debug)]
pub struct CompositeOperator {
    n: usize,
    lowrank: Option<(FactorizedPsd, f64)>,
    sparse: Option<(SparseSymmetric, f64)>,
    dense: Option<(SymmetricMatrix, f64)>,
}

impl CompositeOperator {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            lowrank: None,
            sparse: None,
            dense: None,
        }
    }

    pub fn with_lowrank(mut self, part: FactorizedPsd, mult: f64) -> Result<Self> {
        self.check_dim(part.n())?;
        self.lowrank = Some((part, mult));
        Ok(self)
    }

    pub fn with_sparse(mut self, part: SparseSymmetric, mult: f64) -> Result<Self> {
        self.check_dim(part.n())?;
        self.sparse = Some((part, mult));
        Ok(self)
    }

    pub fn with_dense(mut self, part: SymmetricMatrix, mult: f64) -> Result<Self> {
        self.check_dim(part.n())?;
        self.dense = Some((part, mult));
        Ok(self)
    }

    pub fn from_dense(m: SymmetricMatrix) -> Self {
        let n = m.n();
        Self {
            n,
            lowrank: None,
            sparse: None,
            dense: Some((m, 1.0)),
        }
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.n {
            return Err(contract(format!("operator part has dimension {n}, expected {}", self.n)));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn has_dense_part(&self) -> bool {
        self.dense.is_some()
    }

    pub fn lowrank(&self) -> Option<&(FactorizedPsd, f64)> {
        self.lowrank.as_ref()
    }

    pub fn sparse(&self) -> Option<&(SparseSymmetric, f64)> {
        self.sparse.as_ref()
    }

    pub fn dense(&self) -> Option<&(SymmetricMatrix, f64)> {
        self.dense.as_ref()
    }

    /// Same operator with every multiplier scaled by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        if let Some((_, m)) = out.lowrank.as_mut() {
            *m *= s;
        }
        if let Some((_, m)) = out.sparse.as_mut() {
            *m *= s;
        }
        if let Some((_, m)) = out.dense.as_mut() {
            *m *= s;
        }
        out
    }

    /// Upper bound on the spectral norm: sum of the parts' Frobenius norms.
    pub fn norm_bound(&self) -> f64 {
        let mut b = 0.0;
        if let Some((f, s)) = &self.lowrank {
            b += s.abs() * f.frobenius_norm_sq().sqrt();
        }
        if let Some((sp, s)) = &self.sparse {
            b += s.abs() * sp.frobenius_norm();
        }
        if let Some((d, s)) = &self.dense {
            b += s.abs() * d.frobenius_norm();
        }
        b
    }

    pub fn matvec(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.n {
            return Err(contract(format!(
                "matvec with vector of length {}, operator dimension {}",
                x.len(),
                self.n
            )));
        }
        let mut y = DVector::zeros(self.n);
        self.apply(x, &mut y);
        Ok(y)
    }

    pub fn materialize(&self) -> Result<SymmetricMatrix> {
        self.materialize_capped(DEFAULT_DENSE_CAP)
    }

    pub fn materialize_capped(&self, cap: usize) -> Result<SymmetricMatrix> {
        if self.n > cap {
            return Err(Error::DenseCap { n: self.n, cap });
        }
        let mut m = DMatrix::zeros(self.n, self.n);
        if let Some((f, s)) = &self.lowrank {
            m += f.to_dense_capped(cap)?.as_matrix() * *s;
        }
        if let Some((sp, s)) = &self.sparse {
            for &(i, j, v) in sp.triplets() {
                m[(i, j)] += s * v;
                if i != j {
                    m[(j, i)] += s * v;
                }
            }
        }
        if let Some((d, s)) = &self.dense {
            m += d.as_matrix() * *s;
        }
        Ok(SymmetricMatrix::symmetrized(m))
    }
}

impl SymmetricOperator for CompositeOperator {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &DVector<f64>, y: &mut DVector<f64>) {
        y.fill(0.0);
        if let Some((d, s)) = &self.dense {
            y.gemv(*s, d.as_matrix(), x, 0.0);
        }
        if let Some((f, s)) = &self.lowrank {
            f.matvec_acc(x, *s, y);
        }
        if let Some((sp, s)) = &self.sparse {
            sp.matvec_acc(x, *s, y);
        }
    }
}
