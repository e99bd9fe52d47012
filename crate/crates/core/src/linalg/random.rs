//! Seeded random matrices for generators and tests.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{FactorizedPsd, SymmetricMatrix};

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

pub fn random_unit<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    loop {
        let v = gaussian_vector(rng, n);
        let norm = v.norm();
        if norm > 1e-8 {
            return v / norm;
        }
    }
}

/// n×k matrix with orthonormal columns, Haar-distributed up to column signs.
pub fn random_orthonormal<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> DMatrix<f64> {
    assert!(k <= n);
    let g = DMatrix::from_fn(n, k, |_, _| rng.sample(StandardNormal));
    g.qr().q()
}

/// GOE-style matrix: off-diagonal N(0, scale²), diagonal N(0, 2 scale²).
pub fn random_symmetric<R: Rng + ?Sized>(rng: &mut R, n: usize, scale: f64) -> SymmetricMatrix {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal) * scale);
    SymmetricMatrix::symmetrized((&g + g.transpose()) * std::f64::consts::FRAC_1_SQRT_2)
}

/// `U diag(spectrum) Uᵀ` with a random orthonormal `U`.
pub fn with_spectrum<R: Rng + ?Sized>(rng: &mut R, spectrum: &[f64]) -> SymmetricMatrix {
    let n = spectrum.len();
    let u = random_orthonormal(rng, n, n);
    let d = DMatrix::from_diagonal(&DVector::from_column_slice(spectrum));
    SymmetricMatrix::symmetrized(&u * d * u.transpose())
}

/// Random rank-`r` factor with weights normalized to `trace`.
pub fn random_factor<R: Rng + ?Sized>(rng: &mut R, n: usize, r: usize, trace: f64) -> FactorizedPsd {
    let basis = random_orthonormal(rng, n, r);
    let raw: Vec<f64> = (0..r).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    FactorizedPsd::from_parts(basis, raw.iter().map(|w| w * trace / total).collect())
}
