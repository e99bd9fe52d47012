use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{SymmetricMatrix, SymmetricOperator};
use crate::error::{input, Result};

/// Leading eigenpairs in non-increasing order of eigenvalue.
#[derive(Clone, Debug)]
pub struct EigenPairs {
    values: Vec<f64>,
    vectors: DMatrix<f64>,
    residuals: Vec<f64>,
    pub(crate) matvecs: usize,
}

impl EigenPairs {
    pub(crate) fn new(values: Vec<f64>, vectors: DMatrix<f64>, residuals: Vec<f64>, matvecs: usize) -> Self {
        assert_eq!(values.len(), vectors.ncols());
        assert_eq!(values.len(), residuals.len());
        assert!(
            values.windows(2).all(|w| w[0] >= w[1]),
            "eigenvalues must be non-increasing: {values:?}"
        );
        Self {
            values,
            vectors,
            residuals,
            matvecs,
        }
    }

    pub fn k(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column-orthonormal n×k matrix; column `i` pairs with `values()[i]`.
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    /// `‖A v_i − λ_i v_i‖₂` per pair.
    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    /// Operator applications spent by the solver (0 for dense solves).
    pub fn matvecs(&self) -> usize {
        self.matvecs
    }
}

/// Sorts a nalgebra symmetric eigendecomposition into non-increasing order.
pub(crate) fn sorted_desc(eig: SymmetricEigen<f64, nalgebra::Dyn>) -> (Vec<f64>, DMatrix<f64>) {
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = eig.eigenvectors.select_columns(order.iter());
    (values, vectors)
}

/// Full spectrum of a dense symmetric matrix, non-increasing.
pub fn full_eigendecomposition(m: &SymmetricMatrix) -> Result<EigenPairs> {
    if !m.is_finite() {
        return Err(input("matrix has non-finite entries"));
    }
    let (values, vectors) = sorted_desc(SymmetricEigen::new(m.as_matrix().clone()));
    let residuals = residuals(m, &values, &vectors);
    Ok(EigenPairs::new(values, vectors, residuals, 0))
}

pub(crate) fn residuals<Op: SymmetricOperator + ?Sized>(
    op: &Op,
    values: &[f64],
    vectors: &DMatrix<f64>,
) -> Vec<f64> {
    let mut y = DVector::zeros(op.dim());
    values
        .iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let v = vectors.column(i).into_owned();
            op.apply(&v, &mut y);
            (&y - &v * lambda).norm()
        })
        .collect()
}
