//! Top-k eigenpairs of an implicit symmetric operator.
//!
//! Lanczos with full (two-pass Gram-Schmidt) reorthogonalization. The
//! projected matrix is accumulated from the reorthogonalization
//! coefficients, so Rayleigh-Ritz stays valid after thick restarts and
//! after fresh vectors are injected on breakdown. A single Krylov sequence
//! sees one direction per distinct eigenvalue, so once the top-k Ritz pairs
//! converge a fresh random direction is injected and the iteration keeps
//! going for a verification sweep; this picks up eigenvalues of
//! multiplicity > 1 that the first sequence could not see.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::eigen::{residuals, sorted_desc};
use super::random::random_unit;
use super::{EigenPairs, SymmetricOperator};
use crate::error::{contract, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LanczosConfig {
    /// Absolute bound on `‖A v − λ v‖₂` for every returned pair.
    pub tol: f64,
    /// Operator applications allowed per attempt.
    pub max_iter: usize,
    pub seed: u64,
    /// Cap on the Krylov basis size before a thick restart; `None` picks
    /// `max(3k, k + 30)`.
    pub max_basis: Option<usize>,
    /// Extra attempts with fresh seeds after an attempt stagnates.
    pub restarts: usize,
    /// Run a verification sweep from a fresh direction after convergence.
    pub verify: bool,
}

impl Default for LanczosConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 5000,
            seed: 0x5eed,
            max_basis: None,
            restarts: 3,
            verify: true,
        }
    }
}

impl LanczosConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// The `k` algebraically largest eigenpairs of `op`.
///
/// On failure returns [`Error::Convergence`] carrying the residuals of the
/// best attempt so the caller can decide on a fallback.
pub fn lanczos_topk<Op: SymmetricOperator + ?Sized>(op: &Op, k: usize, cfg: &LanczosConfig) -> Result<EigenPairs> {
    let n = op.dim();
    if k == 0 || k > n {
        return Err(contract(format!("lanczos_topk needs 1 <= k <= n, got k = {k}, n = {n}")));
    }
    if !(cfg.tol > 0.0) {
        return Err(contract("lanczos tolerance must be positive"));
    }
    let mut total = 0;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for attempt in 0..=cfg.restarts {
        let seed = cfg.seed.wrapping_add((attempt as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        match Attempt::new(op, k, cfg, seed).run() {
            Ok(mut pairs) => {
                pairs.matvecs += total;
                return Ok(pairs);
            }
            Err(Stalled { matvecs, residuals }) => {
                total += matvecs;
                let worst = residuals.iter().copied().fold(0.0, f64::max);
                if best.as_ref().is_none_or(|(w, _)| worst < *w) {
                    best = Some((worst, residuals));
                }
                log::debug!("lanczos attempt {attempt} stalled (worst residual {worst:.3e})");
            }
        }
    }
    let (worst_residual, residuals) = best.expect("at least one attempt ran");
    Err(Error::Convergence {
        iterations: total,
        tol: cfg.tol,
        worst_residual,
        residuals,
    })
}

struct Stalled {
    matvecs: usize,
    residuals: Vec<f64>,
}

/// One seeded Lanczos run.
///
/// Basis vectors `0..processed` have had the operator applied and their
/// full column of `H = QᵀAQ` filled in; the remaining (at most two) are
/// pending. Every residual direction is appended to the basis, so for a Ritz
/// vector `Q_p s` the exact residual norm is `‖H[pending, processed] s‖`.
struct Attempt<'a, Op: ?Sized> {
    op: &'a Op,
    k: usize,
    n: usize,
    tol: f64,
    max_iter: usize,
    max_basis: usize,
    verify: bool,
    rng: ChaCha8Rng,
    basis: Vec<DVector<f64>>,
    processed: usize,
    h: DMatrix<f64>,
    matvecs: usize,
}

impl<'a, Op: SymmetricOperator + ?Sized> Attempt<'a, Op> {
    fn new(op: &'a Op, k: usize, cfg: &LanczosConfig, seed: u64) -> Self {
        let n = op.dim();
        let max_basis = cfg.max_basis.unwrap_or((3 * k).max(k + 30)).max(k + 5).min(n);
        Self {
            op,
            k,
            n,
            tol: cfg.tol,
            max_iter: cfg.max_iter.max(1),
            max_basis,
            verify: cfg.verify,
            rng: ChaCha8Rng::seed_from_u64(seed),
            basis: Vec::with_capacity(max_basis),
            processed: 0,
            // Room for the pending vectors on top of a full basis.
            h: DMatrix::zeros(max_basis + 2, max_basis + 2),
            matvecs: 0,
        }
    }

    /// Orthogonalizes `w` against the basis twice; returns the coefficients.
    fn orthogonalize(&self, w: &mut DVector<f64>) -> Vec<f64> {
        let mut coef = vec![0.0; self.basis.len()];
        for _ in 0..2 {
            for (c, q) in coef.iter_mut().zip(&self.basis) {
                let d = q.dot(w);
                w.axpy(-d, q, 1.0);
                *c += d;
            }
        }
        coef
    }

    /// Random unit vector orthogonal to the basis, or `None` when the basis
    /// already spans the space numerically.
    fn fresh_direction(&mut self) -> Option<DVector<f64>> {
        if self.basis.len() >= self.n {
            return None;
        }
        for _ in 0..4 {
            let mut v = random_unit(&mut self.rng, self.n);
            self.orthogonalize(&mut v);
            let norm = v.norm();
            if norm > 1e-6 {
                return Some(v / norm);
            }
        }
        None
    }

    /// Appends a pending vector whose coupling to processed vectors is zero.
    fn push_uncoupled(&mut self, v: DVector<f64>) {
        let idx = self.basis.len();
        for c in 0..self.processed {
            self.h[(idx, c)] = 0.0;
            self.h[(c, idx)] = 0.0;
        }
        self.basis.push(v);
    }

    fn ritz(&self) -> (Vec<f64>, DMatrix<f64>) {
        let p = self.processed;
        sorted_desc(SymmetricEigen::new(self.h.view((0, 0), (p, p)).into_owned()))
    }

    fn residual_estimates(&self, s: &DMatrix<f64>) -> Vec<f64> {
        let p = self.processed;
        let pending = self.basis.len() - p;
        let coupling = self.h.view((p, 0), (pending, p));
        (0..self.k).map(|i| (coupling * s.column(i)).norm()).collect()
    }

    fn ritz_vectors(&self, s: &DMatrix<f64>, count: usize) -> DMatrix<f64> {
        let mut y = DMatrix::zeros(self.n, count);
        for (i, q) in self.basis.iter().take(self.processed).enumerate() {
            for c in 0..count {
                let coef = s[(i, c)];
                if coef != 0.0 {
                    y.column_mut(c).axpy(coef, q, 1.0);
                }
            }
        }
        y
    }

    /// Compresses the processed block to its leading `keep` Ritz vectors,
    /// carrying the pending vectors and their couplings along.
    fn thick_restart(&mut self, keep: usize) {
        let p = self.processed;
        let (theta, s) = self.ritz();
        let s_keep = s.columns(0, keep).into_owned();
        let y = self.ritz_vectors(&s, keep);
        let pending: Vec<DVector<f64>> = self.basis.drain(p..).collect();
        let coupling = self.h.view((p, 0), (pending.len(), p)) * &s_keep;

        self.basis = (0..keep).map(|c| y.column(c).into_owned()).collect();
        self.h.fill(0.0);
        for (i, t) in theta.iter().take(keep).enumerate() {
            self.h[(i, i)] = *t;
        }
        for (u, v) in pending.into_iter().enumerate() {
            for c in 0..keep {
                self.h[(keep + u, c)] = coupling[(u, c)];
                self.h[(c, keep + u)] = coupling[(u, c)];
            }
            self.basis.push(v);
        }
        self.processed = keep;
    }

    fn stalled(&self, residuals: Vec<f64>) -> Stalled {
        Stalled {
            matvecs: self.matvecs,
            residuals,
        }
    }

    fn run(mut self) -> std::result::Result<EigenPairs, Stalled> {
        let start = random_unit(&mut self.rng, self.n);
        self.basis.push(start);
        let mut scale = 0.0f64;
        // Matvec count at which a pending verification sweep may end.
        let mut sweep_until: Option<usize> = None;
        let mut last_residuals = vec![f64::INFINITY; self.k];
        // The projected eigenproblem is O(p³), so checks are spaced
        // geometrically in the basis size.
        let spacing = |p: usize| (p / 2).max(4);
        let mut next_check = self.k;

        loop {
            let j = self.processed;
            let mut w = DVector::zeros(self.n);
            self.op.apply(&self.basis[j], &mut w);
            self.matvecs += 1;
            let coef = self.orthogonalize(&mut w);
            for (i, c) in coef.iter().enumerate() {
                self.h[(i, j)] = *c;
                self.h[(j, i)] = *c;
                scale = scale.max(c.abs());
            }
            self.processed += 1;

            let beta = w.norm();
            if beta > 1e-12 * scale.max(f64::MIN_POSITIVE) && self.basis.len() < self.n {
                let idx = self.basis.len();
                for c in 0..self.processed {
                    self.h[(idx, c)] = 0.0;
                    self.h[(c, idx)] = 0.0;
                }
                self.h[(idx, j)] = beta;
                self.h[(j, idx)] = beta;
                self.basis.push(w / beta);
            }
            let exhausted = self.processed == self.n;

            let restart_due = self.basis.len() >= self.max_basis && self.max_basis < self.n;
            let check = self.processed >= self.k
                && (exhausted || restart_due || sweep_until.is_some_and(|u| self.matvecs >= u) || self.processed >= next_check);
            if check {
                next_check = self.processed + spacing(self.processed);
                let (theta, s) = self.ritz();
                let estimates = self.residual_estimates(&s);
                if exhausted || estimates.iter().all(|e| *e <= 0.5 * self.tol) {
                    let sweep_pending = self.verify && !exhausted && sweep_until.is_none_or(|u| self.matvecs < u);
                    if sweep_pending {
                        if sweep_until.is_none() {
                            sweep_until = Some(2 * self.matvecs);
                            if let Some(z) = self.fresh_direction() {
                                self.push_uncoupled(z);
                            }
                        }
                    } else {
                        let y = self.ritz_vectors(&s, self.k);
                        let values = theta[..self.k].to_vec();
                        let res = residuals(self.op, &values, &y);
                        self.matvecs += self.k;
                        if res.iter().all(|r| *r <= self.tol) {
                            return Ok(EigenPairs::new(values, y, res, self.matvecs));
                        }
                        if exhausted {
                            return Err(self.stalled(res));
                        }
                        last_residuals = res;
                    }
                } else {
                    last_residuals = estimates;
                }
            }

            if self.matvecs >= self.max_iter {
                return Err(self.stalled(last_residuals));
            }
            if self.processed == self.basis.len() {
                // Invariant subspace: continue from a fresh direction.
                match self.fresh_direction() {
                    Some(z) => self.push_uncoupled(z),
                    None => return Err(self.stalled(last_residuals)),
                }
            }
            if self.basis.len() >= self.max_basis && self.max_basis < self.n {
                let keep = self.k + (self.max_basis - self.k - 2) / 2;
                self.thick_restart(keep);
                next_check = next_check.min(keep + spacing(keep));
            }
        }
    }
}
