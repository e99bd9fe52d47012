//! Least squares `f(X) = ½‖X − Y‖_F²` over the spectrahedron with a known
//! rank-r optimum and a prescribed eigen-gap.
//!
//! `Y = U diag(y) Uᵀ` with `y_i = x_i + level` for `i ≤ r` (where `x` sums
//! to one) and a tail bounded by `y_{r+1} = level − δ`. Then `Π(Y) = X*`
//! has weights `x`, the gradient `X* − Y` equals `−level` on range(X*) and
//! `−y_i` on the tail, so its gap `μ_{n−r} − μ_n` is exactly `δ`. `Y` is kept
//! PSD, which requires `δ ≤ level`, and gives the oracle bounds
//! `‖X − Y‖_F² ≤ 1 + ‖Y‖_F²` and `‖X − Y‖₂ ≤ max(1, ‖Y‖₂)`.
//!
//! Oracle noise: each draw adds `σ·s·E` with `s = ±1` and `E` a random unit
//! symmetric basis element (`e_i e_iᵀ` or `(e_i e_jᵀ + e_j e_iᵀ)/√2`). It is
//! unbiased, has `‖·‖_F = σ` exactly and costs O(1) per draw.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Gradient, OracleConstants, OracleRng, Problem};
use crate::error::{contract, input, Result};
use crate::linalg::random::random_orthonormal;
use crate::linalg::{FactorizedPsd, SparseAccumulator, SymmetricMatrix};
use crate::projection::simplex_threshold;

pub const DEFAULT_LEVEL: f64 = 2.0;

fn default_level() -> f64 {
    DEFAULT_LEVEL
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticParams {
    pub n: usize,
    pub r_star: usize,
    pub delta: f64,
    /// Threshold of the projection of `Y`; the gap can be at most this.
    #[serde(default = "default_level")]
    pub level: f64,
    /// Oracle noise level.
    #[serde(default)]
    pub sigma: f64,
    pub seed: u64,
}

impl SyntheticParams {
    pub fn new(n: usize, r_star: usize, delta: f64, seed: u64) -> Self {
        Self {
            n,
            r_star,
            delta,
            level: DEFAULT_LEVEL,
            sigma: 0.0,
            seed,
        }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }
}

/// Serialized form. The eigenbasis is regenerated from `seed`, so the
/// document is small and loading it reproduces the instance bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticDocument {
    pub n: usize,
    pub r_star: usize,
    pub delta: f64,
    pub level: f64,
    pub sigma: f64,
    pub seed: u64,
    /// Eigenvalues of `Y`, non-increasing.
    pub spectrum: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SyntheticInstance {
    doc: SyntheticDocument,
    basis: DMatrix<f64>,
    y: SymmetricMatrix,
    neg_y: SymmetricMatrix,
    y_norm_sq: f64,
    x_star: FactorizedPsd,
    threshold: f64,
    constants: OracleConstants,
}

const SPECTRUM_STREAM: u64 = 0;
const BASIS_STREAM: u64 = 1;

impl SyntheticInstance {
    pub fn generate(p: &SyntheticParams) -> Result<Self> {
        check_shape(p.n, p.r_star)?;
        if !(p.delta > 0.0 && p.delta.is_finite()) {
            return Err(input(format!("gap must be positive, got {}", p.delta)));
        }
        if !(p.level > 0.0 && p.level.is_finite()) {
            return Err(input(format!("level must be positive, got {}", p.level)));
        }
        if p.delta > p.level {
            return Err(input(format!(
                "gap {} is infeasible for level {}: the largest tail eigenvalue of Y would be {} < 0 \
                 and Y must stay PSD; raise `level` to at least the gap",
                p.delta,
                p.level,
                p.level - p.delta
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        rng.set_stream(SPECTRUM_STREAM);
        let mut x: Vec<f64> = (0..p.r_star).map(|_| rng.random_range(0.5..1.5)).collect();
        let total: f64 = x.iter().sum();
        x.iter_mut().for_each(|v| *v /= total);
        x.sort_by(|a, b| b.total_cmp(a));
        let top_tail = p.level - p.delta;
        let mut tail: Vec<f64> = (0..p.n - p.r_star - 1)
            .map(|_| rng.random_range(0.0..=1.0) * top_tail)
            .collect();
        tail.sort_by(|a, b| b.total_cmp(a));
        let mut spectrum: Vec<f64> = x.iter().map(|v| v + p.level).collect();
        spectrum.push(top_tail);
        spectrum.extend(tail);
        Self::from_document(SyntheticDocument {
            n: p.n,
            r_star: p.r_star,
            delta: p.delta,
            level: p.level,
            sigma: p.sigma,
            seed: p.seed,
            spectrum,
        })
    }

    pub fn from_document(doc: SyntheticDocument) -> Result<Self> {
        check_shape(doc.n, doc.r_star)?;
        let (n, r) = (doc.n, doc.r_star);
        let y_vals = &doc.spectrum;
        if y_vals.len() != n {
            return Err(input(format!("spectrum has {} values, expected {n}", y_vals.len())));
        }
        if y_vals.iter().any(|v| !v.is_finite()) || y_vals.windows(2).any(|w| w[0] < w[1]) {
            return Err(input("spectrum must be finite and non-increasing"));
        }
        if y_vals[n - 1] < 0.0 {
            return Err(input("spectrum must be nonnegative (Y is PSD)"));
        }
        if !(doc.sigma >= 0.0 && doc.sigma.is_finite()) {
            return Err(input(format!("sigma must be finite and >= 0, got {}", doc.sigma)));
        }
        let t = simplex_threshold(y_vals, 1.0)?;
        if t.active != r {
            return Err(input(format!(
                "spectrum projects to rank {}, document declares rank {r}",
                t.active
            )));
        }
        let gap = t.lambda - y_vals[r];
        if (gap - doc.delta).abs() > 1e-9 * doc.delta.abs().max(1.0) {
            return Err(input(format!("spectrum has gap {gap}, document declares {}", doc.delta)));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(doc.seed);
        rng.set_stream(BASIS_STREAM);
        let basis = random_orthonormal(&mut rng, n, n);
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(y_vals));
        let y = SymmetricMatrix::new(&basis * d * basis.transpose())?;
        let weights: Vec<f64> = y_vals[..r].iter().map(|v| v - t.lambda).collect();
        let x_star = FactorizedPsd::from_parts(basis.columns(0, r).into_owned(), weights);
        let y_norm_sq: f64 = y_vals.iter().map(|v| v * v).sum();
        let constants = OracleConstants {
            beta: 1.0,
            g: (1.0 + y_norm_sq).sqrt() + doc.sigma,
            b: y_vals[0].max(1.0) + doc.sigma,
            sigma: doc.sigma,
        };
        Ok(Self {
            neg_y: y.scaled(-1.0),
            doc,
            basis,
            y,
            y_norm_sq,
            x_star,
            threshold: t.lambda,
            constants,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_document(serde_json::from_str(s)?)
    }

    pub fn document(&self) -> &SyntheticDocument {
        &self.doc
    }

    pub fn n(&self) -> usize {
        self.doc.n
    }

    pub fn r_star(&self) -> usize {
        self.doc.r_star
    }

    pub fn sigma(&self) -> f64 {
        self.doc.sigma
    }

    /// Gap recomputed from the stored spectrum.
    pub fn gap(&self) -> f64 {
        self.threshold - self.doc.spectrum[self.doc.r_star]
    }

    pub fn y(&self) -> &SymmetricMatrix {
        &self.y
    }

    pub fn x_star(&self) -> &FactorizedPsd {
        &self.x_star
    }

    /// Eigenbasis of `Y`; its first `r` columns span range(X*).
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Same instance with a different oracle noise level.
    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        Self::from_document(SyntheticDocument {
            sigma,
            ..self.doc.clone()
        })
    }

    pub fn gradient_at(&self, x: &FactorizedPsd) -> Result<SymmetricMatrix> {
        x.to_dense()?.add_scaled(&self.y, -1.0)
    }

    pub fn gradient_at_optimum(&self) -> SymmetricMatrix {
        self.x_star.to_dense().expect("synthetic dimension below dense cap").add_scaled(&self.y, -1.0).expect("same dimension")
    }

    /// Rank-r point on the spectrahedron within Frobenius distance `radius`
    /// of X*, obtained by tilting the eigenbasis and reweighting.
    pub fn warm_start<R: Rng + ?Sized>(&self, radius: f64, rng: &mut R) -> Result<FactorizedPsd> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(contract(format!("warm-start radius must be finite and >= 0, got {radius}")));
        }
        let (n, r) = (self.n(), self.r_star());
        let e = DMatrix::<f64>::from_fn(n, r, |_, _| rng.sample(StandardNormal));
        let e = &e / e.norm();
        let mut d: Vec<f64> = (0..r).map(|_| rng.sample(StandardNormal)).collect();
        let mean = d.iter().sum::<f64>() / r as f64;
        d.iter_mut().for_each(|v| *v -= mean);
        let dn = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if dn > 0.0 {
            d.iter_mut().for_each(|v| *v /= dn);
        }
        let mut eps = radius;
        for _ in 0..200 {
            let w: Vec<f64> = self.x_star.weights().iter().zip(&d).map(|(w, d)| w + eps * d).collect();
            if w.iter().all(|v| *v > 0.0) {
                let total: f64 = w.iter().sum();
                let q = (self.x_star.basis() + &e * eps).qr().q();
                let cand = FactorizedPsd::from_parts(q, w.iter().map(|v| v / total).collect());
                if cand.distance_sq(&self.x_star).sqrt() <= radius {
                    return Ok(cand);
                }
            }
            eps *= 0.5;
        }
        Ok(self.x_star.clone())
    }
}

fn check_shape(n: usize, r: usize) -> Result<()> {
    if n < 2 || r == 0 || r >= n {
        return Err(input(format!("need 1 <= r_star < n, got r_star = {r}, n = {n}")));
    }
    Ok(())
}

impl Problem for SyntheticInstance {
    fn dim(&self) -> usize {
        self.doc.n
    }

    fn constants(&self) -> OracleConstants {
        self.constants
    }

    fn objective(&self, x: &FactorizedPsd) -> f64 {
        let yv = self.y.as_matrix() * x.basis();
        let cross: f64 = x
            .weights()
            .iter()
            .enumerate()
            .map(|(k, w)| w * x.basis().column(k).dot(&yv.column(k)))
            .sum();
        0.5 * (x.frobenius_norm_sq() - 2.0 * cross + self.y_norm_sq)
    }

    fn full_gradient(&self, _x: &FactorizedPsd) -> Gradient {
        Gradient {
            iterate_coeff: 1.0,
            dense: Some(self.neg_y.clone()),
            sparse: None,
        }
    }

    fn sample_gradient(&self, x: &FactorizedPsd, batch: usize, rng: &mut OracleRng) -> Gradient {
        let mut g = self.full_gradient(x);
        let sigma = self.doc.sigma;
        if sigma > 0.0 && batch > 0 {
            let n = self.doc.n;
            let off = sigma * std::f64::consts::FRAC_1_SQRT_2;
            let mut acc = SparseAccumulator::new(n);
            for _ in 0..batch {
                let i = rng.random_range(0..n);
                let j = rng.random_range(0..n);
                let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                acc.add(i, j, s * if i == j { sigma } else { off });
            }
            g.sparse = Some(acc.finish(1.0 / batch as f64));
        }
        g
    }

    fn linear_summary(&self, x: &FactorizedPsd) -> Vec<f64> {
        let v = x.basis();
        let vw = v * DMatrix::from_diagonal(&DVector::from_column_slice(x.weights()));
        (&vw * v.transpose()).as_slice().to_vec()
    }

    fn objective_from_summary(&self, summary: &[f64]) -> f64 {
        0.5 * summary
            .iter()
            .zip(self.y.as_matrix().as_slice())
            .map(|(s, y)| (s - y) * (s - y))
            .sum::<f64>()
    }

    fn optimum(&self) -> Option<&FactorizedPsd> {
        Some(&self.x_star)
    }

    fn optimal_value(&self) -> Option<f64> {
        let r = self.doc.r_star;
        let head = r as f64 * self.threshold * self.threshold;
        let tail: f64 = self.doc.spectrum[r..].iter().map(|v| v * v).sum();
        Some(0.5 * (head + tail))
    }
}
