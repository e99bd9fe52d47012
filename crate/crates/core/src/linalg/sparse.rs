use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::SymmetricMatrix;
use crate::error::{contract, Result};

/// Sparse symmetric matrix stored as upper-triangle triplets `(i, j, v)`
/// with `i <= j`, sorted and duplicate-free. Off-diagonal triplets stand
/// for both mirrored entries.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSymmetric {
    n: usize,
    triplets: Vec<(usize, usize, f64)>,
}

impl SparseSymmetric {
    /// Triplets with `i > j` are mirrored into the upper triangle. Duplicate
    /// positions are rejected.
    pub fn from_triplets(n: usize, triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        let mut out = Vec::with_capacity(triplets.len());
        for (i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(contract(format!("triplet ({i}, {j}) out of range for n = {n}")));
            }
            out.push((i.min(j), i.max(j), v));
        }
        out.sort_by_key(|&(i, j, _)| (i, j));
        if out.windows(2).any(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(contract("duplicate triplet position"));
        }
        Ok(Self { n, triplets: out })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            triplets: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.triplets.len()
    }

    pub fn triplets(&self) -> &[(usize, usize, f64)] {
        &self.triplets
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            n: self.n,
            triplets: self.triplets.iter().map(|&(i, j, v)| (i, j, v * s)).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.triplets
            .iter()
            .map(|&(i, j, v)| if i == j { v * v } else { 2.0 * v * v })
            .sum::<f64>()
            .sqrt()
    }

    /// Accumulates `y += s * A x`.
    pub fn matvec_acc(&self, x: &DVector<f64>, s: f64, y: &mut DVector<f64>) {
        for &(i, j, v) in &self.triplets {
            let sv = s * v;
            y[i] += sv * x[j];
            if i != j {
                y[j] += sv * x[i];
            }
        }
    }

    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.n);
        self.matvec_acc(x, 1.0, &mut y);
        y
    }

    pub fn to_dense(&self) -> SymmetricMatrix {
        let mut m = DMatrix::zeros(self.n, self.n);
        for &(i, j, v) in &self.triplets {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        SymmetricMatrix::symmetrized(m)
    }
}

/// Sums contributions at repeated positions; used to average minibatch
/// gradients. Iteration order of the result is deterministic.
#[derive(Debug, Default)]
pub struct SparseAccumulator {
    n: usize,
    entries: BTreeMap<(usize, usize), f64>,
}

impl SparseAccumulator {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            entries: BTreeMap::new(),
        }
    }

    /// Adds `v` at the mirrored pair `(i, j)`/`(j, i)`.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n && j < self.n);
        *self.entries.entry((i.min(j), i.max(j))).or_insert(0.0) += v;
    }

    pub fn finish(self, scale: f64) -> SparseSymmetric {
        SparseSymmetric {
            n: self.n,
            triplets: self
                .entries
                .into_iter()
                .map(|((i, j), v)| (i, j, v * scale))
                .collect(),
        }
    }
}
