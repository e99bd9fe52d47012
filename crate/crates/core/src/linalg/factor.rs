use nalgebra::{DMatrix, DVector};

use super::SymmetricMatrix;
use crate::error::{contract, Error, Result};

/// Default refusal threshold for [`FactorizedPsd::to_dense`].
pub const DEFAULT_DENSE_CAP: usize = 2000;

const ORTHO_TOL: f64 = 1e-10;

/// PSD matrix held as `V diag(w) Vᵀ` with column-orthonormal `V` (n×r) and
/// nonnegative weights. Iterates on the spectrahedron have `Σ w = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorizedPsd {
    basis: DMatrix<f64>,
    weights: Vec<f64>,
}

impl FactorizedPsd {
    pub fn new(basis: DMatrix<f64>, weights: Vec<f64>) -> Result<Self> {
        if basis.ncols() != weights.len() {
            return Err(contract(format!(
                "basis has {} columns but {} weights were given",
                basis.ncols(),
                weights.len()
            )));
        }
        if basis.nrows() == 0 {
            return Err(contract("factor dimension must be >= 1"));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(contract(format!("weights must be finite and nonnegative, got {w}")));
        }
        let gram = basis.transpose() * &basis;
        let r = weights.len();
        let dev = (gram - DMatrix::<f64>::identity(r, r)).amax();
        if dev > ORTHO_TOL {
            return Err(contract(format!("basis is not orthonormal (max |VᵀV - I| = {dev:.2e})")));
        }
        Ok(Self { basis, weights })
    }

    /// Skips the orthonormality check; callers guarantee it by construction.
    pub(crate) fn from_parts(basis: DMatrix<f64>, weights: Vec<f64>) -> Self {
        debug_assert_eq!(basis.ncols(), weights.len());
        Self { basis, weights }
    }

    pub fn rank_one(v: &DVector<f64>) -> Result<Self> {
        let norm = v.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(contract("rank-one factor needs a nonzero finite vector"));
        }
        Ok(Self::from_parts(DMatrix::from_column_slice(v.len(), 1, (v / norm).as_slice()), vec![1.0]))
    }

    pub fn n(&self) -> usize {
        self.basis.nrows()
    }

    /// Number of stored columns (some weights may be zero).
    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    /// Number of weights above `tol`.
    pub fn numerical_rank(&self, tol: f64) -> usize {
        self.weights.iter().filter(|&&w| w > tol).count()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn trace(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn is_on_spectrahedron(&self, tol: f64) -> bool {
        (self.trace() - 1.0).abs() <= tol && self.weights.iter().all(|&w| w >= 0.0)
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        if !(s >= 0.0) {
            return Err(contract("PSD factor can only be scaled by s >= 0"));
        }
        Ok(Self::from_parts(
            self.basis.clone(),
            self.weights.iter().map(|w| w * s).collect(),
        ))
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(k, w)| w * self.basis[(i, k)] * self.basis[(j, k)])
            .sum()
    }

    /// Accumulates `y += s * X x`.
    pub fn matvec_acc(&self, x: &DVector<f64>, s: f64, y: &mut DVector<f64>) {
        let mut coeffs = self.basis.tr_mul(x);
        for (c, w) in coeffs.iter_mut().zip(&self.weights) {
            *c *= w * s;
        }
        y.gemv(1.0, &self.basis, &coeffs, 1.0);
    }

    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.n());
        self.matvec_acc(x, 1.0, &mut y);
        y
    }

    pub fn to_dense(&self) -> Result<SymmetricMatrix> {
        self.to_dense_capped(DEFAULT_DENSE_CAP)
    }

    pub fn to_dense_capped(&self, cap: usize) -> Result<SymmetricMatrix> {
        let n = self.n();
        if n > cap {
            return Err(Error::DenseCap { n, cap });
        }
        let mut scaled = self.basis.clone();
        for (k, w) in self.weights.iter().enumerate() {
            scaled.column_mut(k).scale_mut(*w);
        }
        Ok(SymmetricMatrix::symmetrized(scaled * self.basis.transpose()))
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }

    /// Frobenius inner product `Tr(A B)` computed from the factors in
    /// O(n r_a r_b).
    pub fn inner(&self, other: &Self) -> f64 {
        let cross = self.basis.tr_mul(&other.basis);
        let mut acc = 0.0;
        for (a, wa) in self.weights.iter().enumerate() {
            for (b, wb) in other.weights.iter().enumerate() {
                let c = cross[(a, b)];
                acc += wa * wb * c * c;
            }
        }
        acc
    }

    /// `‖A − B‖_F²`, clamped at zero against cancellation.
    ///
    /// Both factors are stacked and reduced by QR, so `‖R D Rᵀ‖_F` is
    /// computed without cancellation between the two traces.
    pub fn distance_sq(&self, other: &Self) -> f64 {
        let (r1, r2) = (self.rank(), other.rank());
        if r1 + r2 == 0 {
            return 0.0;
        }
        let mut w = DMatrix::zeros(self.n(), r1 + r2);
        w.columns_mut(0, r1).copy_from(&self.basis);
        w.columns_mut(r1, r2).copy_from(&other.basis);
        let r = w.qr().r();
        let mut rd = r.clone();
        for k in 0..r1 {
            rd.column_mut(k).scale_mut(self.weights[k]);
        }
        for k in 0..r2 {
            rd.column_mut(r1 + k).scale_mut(-other.weights[k]);
        }
        (rd * r.transpose()).norm_squared()
    }

    /// Drops columns with weight at or below `tol`.
    pub fn pruned(&self, tol: f64) -> Self {
        let keep: Vec<usize> = (0..self.rank()).filter(|&k| self.weights[k] > tol).collect();
        let basis = self.basis.select_columns(keep.iter());
        let weights = keep.iter().map(|&k| self.weights[k]).collect();
        Self::from_parts(basis, weights)
    }
}
