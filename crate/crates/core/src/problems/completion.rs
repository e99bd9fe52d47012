//! Matrix completion under a trace-norm bound, embedded in the spectrahedron.
//!
//! An m×n matrix `X` with `‖X‖_* ≤ τ` is written as `X = 2τ·W` where `W` is
//! the off-diagonal block of some `Z ∈ 𝒮_{m+n}`:
//!
//! ```text
//!     Z = [ A   W ]
//!         [ Wᵀ  C ]
//! ```
//!
//! so the objective is `f(Z) = (1/|S|) Σ (2τ·Z_{i,m+j} − r)²`.
//!
//! Constants. One sampled entry contributes the symmetric matrix with value
//! `g = 2τ(2τZ_{i,m+j} − r)` at `(i, m+j)` and `(m+j, i)`: spectral norm
//! `|g|`, Frobenius norm `√2|g|`. For `Z ∈ 𝒮` we have `|Z_{ij}| ≤ ½`, so
//! `|g| ≤ B := 2τ(τ + max|r|)` and `G := √2·B`. Averages obey the same
//! bounds and the variance of one draw is at most `G²`, so `σ := G`. Along
//! a direction `H` the second derivative is `(8τ²/|S|) Σ H_{i,m+j}²
//! ≤ (4τ²/|S|)‖H‖_F²`, so `β = 4τ²/|S|`.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Gradient, OracleConstants, OracleRng, Problem};
use crate::error::{contract, input, Result};
use crate::linalg::{lanczos_topk, FactorizedPsd, LanczosConfig, SparseAccumulator, SparseSymmetric, SymmetricOperator};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservedEntry {
    pub i: usize,
    pub j: usize,
    pub rating: f64,
}

#[derive(Clone, Debug)]
pub struct MatrixCompletion {
    m: usize,
    n: usize,
    tau: f64,
    entries: Vec<ObservedEntry>,
    constants: OracleConstants,
}

impl MatrixCompletion {
    pub fn new(entries: Vec<ObservedEntry>, m: usize, n: usize, tau: f64) -> Result<Self> {
        if entries.is_empty() {
            return Err(input("matrix completion needs at least one observed entry"));
        }
        if m == 0 || n == 0 {
            return Err(input(format!("matrix dimensions must be positive, got {m}x{n}")));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(input(format!("trace bound must be positive, got {tau}")));
        }
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if e.i >= m || e.j >= n {
                return Err(input(format!("entry ({}, {}) outside {m}x{n}", e.i, e.j)));
            }
            if !e.rating.is_finite() {
                return Err(input(format!("entry ({}, {}) has non-finite rating", e.i, e.j)));
            }
            if !seen.insert((e.i, e.j)) {
                return Err(input(format!("duplicate entry ({}, {})", e.i, e.j)));
            }
        }
        let r_max = entries.iter().map(|e| e.rating.abs()).fold(0.0, f64::max);
        let b = 2.0 * tau * (tau + r_max);
        let g = std::f64::consts::SQRT_2 * b;
        let constants = OracleConstants {
            beta: 4.0 * tau * tau / entries.len() as f64,
            g,
            b,
            sigma: g,
        };
        Ok(Self {
            m,
            n,
            tau,
            entries,
            constants,
        })
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn entries(&self) -> &[ObservedEntry] {
        &self.entries
    }

    /// `2τ·Z_{i,m+j}` for observed entry `k`.
    pub fn prediction(&self, z: &FactorizedPsd, k: usize) -> f64 {
        let e = &self.entries[k];
        2.0 * self.tau * z.entry(e.i, self.m + e.j)
    }

    pub fn predictions(&self, z: &FactorizedPsd) -> Vec<f64> {
        let v = z.basis();
        let w = z.weights();
        self.entries
            .iter()
            .map(|e| {
                let a = v.row(e.i);
                let b = v.row(self.m + e.j);
                2.0 * self.tau * (0..w.len()).map(|k| w[k] * a[k] * b[k]).sum::<f64>()
            })
            .collect()
    }

    /// Average of the per-entry gradients over `indices` (repeats allowed).
    pub fn gradient_on(&self, z: &FactorizedPsd, indices: &[usize]) -> SparseSymmetric {
        let mut acc = SparseAccumulator::new(self.m + self.n);
        let two_tau = 2.0 * self.tau;
        for &k in indices {
            let e = &self.entries[k];
            let resid = two_tau * z.entry(e.i, self.m + e.j) - e.rating;
            acc.add(e.i, self.m + e.j, two_tau * resid);
        }
        acc.finish(1.0 / indices.len().max(1) as f64)
    }

    /// Mean-filled observed matrix.
    pub fn filled_matrix(&self) -> DMatrix<f64> {
        let mean = self.entries.iter().map(|e| e.rating).sum::<f64>() / self.entries.len() as f64;
        let mut a = DMatrix::from_element(self.m, self.n, mean);
        for e in &self.entries {
            a[(e.i, e.j)] = e.rating;
        }
        a
    }

    /// Fill unobserved entries with the mean rating, take the top-r singular
    /// triplets `(s_k, u_k, v_k)` and return `Σ p_k w_k w_kᵀ` with
    /// `w_k = (u_k; v_k)/√2` and `p_k = s_k / Σ s`.
    pub fn warm_start(&self, r: usize, cfg: &LanczosConfig) -> Result<FactorizedPsd> {
        if r == 0 || r > self.m.min(self.n) {
            return Err(contract(format!(
                "warm-start rank must be in 1..={}, got {r}",
                self.m.min(self.n)
            )));
        }
        let op = BipartiteOperator::new(self.filled_matrix());
        let mut cfg = cfg.clone();
        cfg.tol *= op.a.norm().max(1.0);
        let eig = lanczos_topk(&op, r, &cfg)?;
        let s: Vec<f64> = eig.values().iter().map(|v| v.max(0.0)).collect();
        let total: f64 = s.iter().sum();
        if !(total > 0.0) {
            return Err(input("observed matrix is zero; no warm start"));
        }
        Ok(FactorizedPsd::from_parts(
            eig.vectors().clone(),
            s.iter().map(|v| v / total).collect(),
        ))
    }
}

/// The symmetric dilation `[[0, A], [Aᵀ, 0]]`; its eigenpairs are
/// `(±s_k, (u_k; ±v_k)/√2)`.
#[derive(Clone, Debug)]
pub struct BipartiteOperator {
    a: DMatrix<f64>,
}

impl BipartiteOperator {
    pub fn new(a: DMatrix<f64>) -> Self {
        Self { a }
    }
}

impl SymmetricOperator for BipartiteOperator {
    fn dim(&self) -> usize {
        self.a.nrows() + self.a.ncols()
    }

    fn apply(&self, x: &DVector<f64>, y: &mut DVector<f64>) {
        let (m, n) = self.a.shape();
        let top = &self.a * x.rows(m, n);
        let bottom = self.a.tr_mul(&x.rows(0, m));
        y.rows_mut(0, m).copy_from(&top);
        y.rows_mut(m, n).copy_from(&bottom);
    }
}

impl Problem for MatrixCompletion {
    fn dim(&self) -> usize {
        self.m + self.n
    }

    fn constants(&self) -> OracleConstants {
        self.constants
    }

    fn objective(&self, z: &FactorizedPsd) -> f64 {
        self.objective_from_summary(&self.predictions(z))
    }

    fn full_gradient(&self, z: &FactorizedPsd) -> Gradient {
        let all: Vec<usize> = (0..self.entries.len()).collect();
        Gradient::sparse(self.gradient_on(z, &all))
    }

    fn sample_gradient(&self, z: &FactorizedPsd, batch: usize, rng: &mut OracleRng) -> Gradient {
        let idx: Vec<usize> = (0..batch).map(|_| rng.random_range(0..self.entries.len())).collect();
        Gradient::sparse(self.gradient_on(z, &idx))
    }

    fn linear_summary(&self, z: &FactorizedPsd) -> Vec<f64> {
        self.predictions(z)
    }

    fn objective_from_summary(&self, predictions: &[f64]) -> f64 {
        predictions
            .iter()
            .zip(&self.entries)
            .map(|(p, e)| (p - e.rating) * (p - e.rating))
            .sum::<f64>()
            / self.entries.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random::random_factor;
    use crate::linalg::SymmetricMatrix;
    use rand::SeedableRng;

    fn small(seed: u64, m: usize, n: usize, frac: f64, tau: f64) -> MatrixCompletion {
        let mut rng = OracleRng::seed_from_u64(seed);
        let mut entries = Vec::new();
        for i in 0..m {
            for j in 0..n {
                if rng.random::<f64>() < frac {
                    entries.push(ObservedEntry {
                        i,
                        j,
                        rating: rng.random_range(1.0..5.0),
                    });
                }
            }
        }
        MatrixCompletion::new(entries, m, n, tau).unwrap()
    }

    /// Objective of a dense symmetric Z, written out directly.
    fn dense_objective(mc: &MatrixCompletion, z: &DMatrix<f64>) -> f64 {
        let m = mc.rows();
        mc.entries()
            .iter()
            .map(|e| (2.0 * mc.tau() * z[(e.i, m + e.j)] - e.rating).powi(2))
            .sum::<f64>()
            / mc.entries().len() as f64
    }

    #[test]
    fn exact_fit_and_zero_point() {
        let tau = 2.0;
        let mc = MatrixCompletion::new(vec![ObservedEntry { i: 0, j: 0, rating: 1.5 }], 2, 2, tau).unwrap();
        // Z = v vᵀ with v = (a e_0 + a e_2), a² = 1/2 gives Z_{0,2} = 1/2; scale
        // the weight so that 2τ·Z_{0,2} = 1.5 and put the rest on e_1.
        let mut basis = DMatrix::zeros(4, 2);
        basis[(0, 0)] = std::f64::consts::FRAC_1_SQRT_2;
        basis[(2, 0)] = std::f64::consts::FRAC_1_SQRT_2;
        basis[(1, 1)] = 1.0;
        let w0 = 1.5 / (2.0 * tau) * 2.0;
        let z = FactorizedPsd::new(basis, vec![w0, 1.0 - w0]).unwrap();
        assert!(mc.objective(&z).abs() < 1e-15);

        let mc = small(1, 4, 5, 0.6, 3.0);
        let diag = FactorizedPsd::rank_one(&DVector::from_fn(9, |i, _| if i == 0 { 1.0 } else { 0.0 })).unwrap();
        let mean_sq = mc.entries().iter().map(|e| e.rating * e.rating).sum::<f64>() / mc.entries().len() as f64;
        assert!((mc.objective(&diag) - mean_sq).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mc = small(2, 6, 6, 0.5, 1.5);
        let mut rng = OracleRng::seed_from_u64(9);
        for _ in 0..5 {
            let z = random_factor(&mut rng, 12, 4, 1.0);
            let zd = z.to_dense().unwrap().into_matrix();
            let grad = mc.full_gradient(&z).to_dense(&z).unwrap();
            let h = 1e-6;
            let mut fd = DMatrix::zeros(12, 12);
            for a in 0..12 {
                for b in a..12 {
                    let mut e = DMatrix::zeros(12, 12);
                    e[(a, b)] = 1.0;
                    e[(b, a)] = 1.0;
                    let d = (dense_objective(&mc, &(&zd + &e * h)) - dense_objective(&mc, &(&zd - &e * h))) / (2.0 * h);
                    // d = <G, E> = 2 G_ab off the diagonal, 2 G_aa on it.
                    let v = d / 2.0;
                    fd[(a, b)] = v;
                    fd[(b, a)] = v;
                }
            }
            for a in 0..12 {
                fd[(a, a)] = 0.0;
            }
            let rel = (grad.as_matrix() - &fd).norm() / grad.frobenius_norm();
            assert!(rel <= 1e-5, "rel {rel}");
        }
    }

    #[test]
    fn exhaustive_batch_equals_full_gradient() {
        let mc = small(3, 5, 7, 0.4, 2.0);
        let mut rng = OracleRng::seed_from_u64(4);
        let z = random_factor(&mut rng, 12, 3, 1.0);
        let all: Vec<usize> = (0..mc.entries().len()).collect();
        let a = mc.gradient_on(&z, &all);
        let b = mc.full_gradient(&z).sparse.unwrap();
        assert_eq!(a, b);
        assert!(a.nnz() <= 2 * all.len());
    }

    #[test]
    fn perfectly_fit_entry_has_zero_gradient() {
        let tau = 1.0;
        let mc = MatrixCompletion::new(vec![ObservedEntry { i: 0, j: 0, rating: 1.0 }], 1, 1, tau).unwrap();
        let v = DVector::from_vec(vec![std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2]);
        let z = FactorizedPsd::rank_one(&v).unwrap();
        let g = mc.gradient_on(&z, &[0]);
        assert!(g.frobenius_norm() < 1e-15);
    }

    #[test]
    fn oracle_unbiased_and_bounded() {
        let mc = small(5, 4, 4, 0.7, 1.0);
        let c = mc.constants();
        let mut rng = OracleRng::seed_from_u64(6);
        let z = random_factor(&mut rng, 8, 2, 1.0);
        let full = mc.full_gradient(&z).to_dense(&z).unwrap();
        let batch = 2;
        let draws = 10_000;
        let mut mean = DMatrix::zeros(8, 8);
        for _ in 0..draws {
            let g = mc.sample_gradient(&z, batch, &mut rng).to_dense(&z).unwrap();
            assert!(g.frobenius_norm() <= c.g + 1e-9);
            mean += g.as_matrix();
        }
        mean /= draws as f64;
        let err = (mean - full.as_matrix()).norm();
        assert!(err <= 3.0 * c.sigma / ((draws * batch) as f64).sqrt(), "err {err}");
    }

    #[test]
    fn convex_and_smooth_on_segments() {
        let mc = small(7, 5, 6, 0.5, 2.0);
        let beta = mc.constants().beta;
        let mut rng = OracleRng::seed_from_u64(8);
        for _ in 0..100 {
            let a = random_factor(&mut rng, 11, 3, 1.0);
            let b = random_factor(&mut rng, 11, 2, 1.0);
            let ad = a.to_dense().unwrap();
            let bd = b.to_dense().unwrap();
            let mid = ad.add_scaled(&bd, 1.0).unwrap().scaled(0.5);
            let fm = dense_objective(&mc, mid.as_matrix());
            assert!(fm <= 0.5 * (mc.objective(&a) + mc.objective(&b)) + 1e-9);
            let ga = mc.full_gradient(&a).to_dense(&a).unwrap();
            let gb = mc.full_gradient(&b).to_dense(&b).unwrap();
            let lhs = ga.add_scaled(&gb, -1.0).unwrap().frobenius_norm();
            let rhs = beta * ad.add_scaled(&bd, -1.0).unwrap().frobenius_norm();
            assert!(lhs <= rhs * (1.0 + 1e-12), "{lhs} > {rhs}");
        }
    }

    #[test]
    fn warm_start_matches_dense_svd() {
        let mc = small(10, 9, 7, 0.6, 4.0);
        let z = mc.warm_start(3, &LanczosConfig::default()).unwrap();
        assert!((z.trace() - 1.0).abs() < 1e-12);
        assert!(z.rank() <= 3);
        let svd = mc.filled_matrix().svd(true, true);
        let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        let total: f64 = s[..3].iter().sum();
        for (k, w) in z.weights().iter().enumerate() {
            assert!((w - s[k] / total).abs() < 1e-10);
        }
    }

    #[test]
    fn warm_start_recovers_fully_observed_low_rank() {
        let mut rng = OracleRng::seed_from_u64(11);
        let (m, n, r) = (8, 6, 2);
        let u = crate::linalg::random::random_orthonormal(&mut rng, m, r);
        let v = crate::linalg::random::random_orthonormal(&mut rng, n, r);
        let a = &u * DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0])) * v.transpose();
        let entries = (0..m)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| ObservedEntry { i, j, rating: a[(i, j)] })
            .collect();
        let mc = MatrixCompletion::new(entries, m, n, 4.0).unwrap();
        let z = mc.warm_start(2, &LanczosConfig::default()).unwrap();
        for (k, p) in mc.predictions(&z).iter().enumerate() {
            assert!((p - mc.entries()[k].rating).abs() < 1e-9);
        }
        assert!(mc.objective(&z) < 1e-18);
    }

    #[test]
    fn warm_start_rank_one_all_ones() {
        let entries = (0..3)
            .flat_map(|i| (0..4).map(move |j| ObservedEntry { i, j, rating: 1.0 }))
            .collect();
        let mc = MatrixCompletion::new(entries, 3, 4, 12f64.sqrt()).unwrap();
        let z = mc.warm_start(1, &LanczosConfig::default()).unwrap();
        assert_eq!(z.weights().len(), 1);
        assert!((z.weights()[0] - 1.0).abs() < 1e-15);
        let expect = DVector::from_fn(7, |i, _| if i < 3 { 1.0 / 6f64.sqrt() } else { 1.0 / 8f64.sqrt() });
        let d = z.to_dense().unwrap();
        let want = SymmetricMatrix::new(&expect * expect.transpose()).unwrap();
        assert!(d.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(MatrixCompletion::new(vec![], 2, 2, 1.0).is_err());
        let dup = vec![ObservedEntry { i: 0, j: 0, rating: 1.0 }; 2];
        assert!(MatrixCompletion::new(dup, 2, 2, 1.0).is_err());
        let oob = vec![ObservedEntry { i: 2, j: 0, rating: 1.0 }];
        assert!(MatrixCompletion::new(oob, 2, 2, 1.0).is_err());
        let mc = small(12, 3, 3, 0.9, 1.0);
        assert!(mc.warm_start(4, &LanczosConfig::default()).is_err());
    }
}
