//! Closed-form quantities of the low-rank SGD analysis: eigen-gap at an
//! optimum, warm-start radius, step size, batch floor, distance bound,
//! robustness of the projection rank and sample complexity.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::linalg::{full_eigendecomposition, lanczos_topk, FactorizedPsd, LanczosConfig, SymmetricMatrix, SymmetricOperator};
use crate::problems::{Problem, SyntheticInstance};
use crate::projection::project_scaled;

/// Largest principal angle (radians) still counted as aligned.
pub const ALIGNMENT_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// Largest principal angle between range(X*) and the bottom-r
    /// eigenspace of the gradient.
    pub angle: f64,
    pub aligned: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapCertificate {
    pub r: usize,
    /// Gradient spectrum, non-increasing.
    pub spectrum: Vec<f64>,
    /// `μ_{n−r} − μ_n`.
    pub delta: f64,
    pub assumption_holds: bool,
    pub alignment: Option<Alignment>,
}

/// Eigen-gap of `grad` at rank `r` from the full spectrum. With `x_star`
/// also checks that range(X*) lies in the bottom-r eigenspace.
pub fn eigen_gap(grad: &SymmetricMatrix, r: usize, x_star: Option<&FactorizedPsd>) -> Result<GapCertificate> {
    let n = grad.n();
    if r == 0 || r >= n {
        return Err(contract(format!("gap rank must satisfy 1 <= r < n, got r = {r}, n = {n}")));
    }
    let eig = full_eigendecomposition(grad)?;
    let mu = eig.values().to_vec();
    let delta = mu[n - r - 1] - mu[n - 1];
    let alignment = match x_star {
        Some(x) => {
            if x.n() != n {
                return Err(contract("optimum and gradient dimensions differ"));
            }
            let w = eig.vectors().columns(n - r, r).into_owned();
            let v = x.pruned(0.0);
            let angle = largest_principal_angle(v.basis(), &w);
            Some(Alignment {
                angle,
                aligned: angle <= ALIGNMENT_TOLERANCE,
            })
        }
        None => None,
    };
    Ok(GapCertificate {
        r,
        spectrum: mu,
        delta,
        assumption_holds: delta > 0.0,
        alignment,
    })
}

/// Largest principal angle of span(v) relative to span(w) (both
/// orthonormal), via `sin θ = ‖(I − WWᵀ)V‖₂`.
fn largest_principal_angle(v: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    if v.ncols() == 0 {
        return 0.0;
    }
    let resid = v - w * (w.transpose() * v);
    let s = resid.singular_values().max();
    s.clamp(0.0, 1.0).asin()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterativeGap {
    pub delta: f64,
    /// Sum of the two residual norms involved; by Weyl each eigenvalue is
    /// within its residual of the true one.
    pub error_bar: f64,
    /// `μ_n, μ_{n−1}, …, μ_{n−r}`.
    pub bottom: Vec<f64>,
    pub matvecs: usize,
}

struct Negated<'a, Op: ?Sized>(&'a Op);

impl<Op: SymmetricOperator + ?Sized> SymmetricOperator for Negated<'_, Op> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn apply(&self, x: &DVector<f64>, y: &mut DVector<f64>) {
        self.0.apply(x, y);
        y.neg_mut();
    }
}

/// Eigen-gap from the bottom `r + 1` eigenvalues only, for large `n`.
pub fn eigen_gap_iterative<Op: SymmetricOperator + ?Sized>(grad: &Op, r: usize, cfg: &LanczosConfig) -> Result<IterativeGap> {
    let n = grad.dim();
    if r == 0 || r >= n {
        return Err(contract(format!("gap rank must satisfy 1 <= r < n, got r = {r}, n = {n}")));
    }
    let eig = lanczos_topk(&Negated(grad), r + 1, cfg)?;
    let bottom: Vec<f64> = eig.values().iter().map(|v| -v).collect();
    let res = eig.residuals();
    Ok(IterativeGap {
        delta: bottom[r] - bottom[0],
        error_bar: res[0] + res[r],
        bottom,
        matvecs: eig.matvecs(),
    })
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(contract(format!("{name} must be positive and finite, got {v}")));
    }
    Ok(())
}

fn nonnegative(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(contract(format!("{name} must be finite and >= 0, got {v}")));
    }
    Ok(())
}

/// `(rβ + √(2r)·B/λ_r)⁻¹`, the coefficient shared by the two radii.
fn radius_coefficient(r: usize, beta: f64, b: f64, lambda_r: f64) -> Result<f64> {
    if r == 0 {
        return Err(contract("rank must be >= 1"));
    }
    if !(lambda_r > 0.0 && lambda_r.is_finite()) {
        return Err(contract(format!("λ_r(X*) must be positive (X* of rank r), got {lambda_r}")));
    }
    nonnegative("beta", beta)?;
    nonnegative("B", b)?;
    let r = r as f64;
    let denom = r * beta + (2.0 * r).sqrt() * b / lambda_r;
    positive("rβ + √(2r)B/λ_r", denom)?;
    Ok(1.0 / denom)
}

/// `R₀ = ⅛ (rβ + √(2r)B/λ_r)⁻¹ δ`; zero when `δ = 0`.
pub fn warm_start_radius(r: usize, beta: f64, b: f64, lambda_r: f64, delta: f64) -> Result<f64> {
    nonnegative("delta", delta)?;
    Ok(0.125 * radius_coefficient(r, beta, b, lambda_r)? * delta)
}

/// `η = R₀ / (10 G √T ln(8T))`.
pub fn theorem_step(r0: f64, g: f64, t: usize) -> Result<f64> {
    nonnegative("R0", r0)?;
    positive("G", g)?;
    if t == 0 {
        return Err(contract("horizon T must be >= 1"));
    }
    let t = t as f64;
    Ok(r0 / (10.0 * g * t.sqrt() * (8.0 * t).ln()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchFloor {
    pub sigma: f64,
    pub g: f64,
    pub r0: f64,
    pub b: f64,
    pub r: usize,
    pub delta: f64,
    pub n: usize,
    pub t: usize,
    pub c1: f64,
    pub c2: f64,
}

/// `L₀ = ⌈max{c₁(σ/(G R₀))², c₂ (B² r²/δ²) ln(nT)}⌉`.
pub fn min_batch(p: &BatchFloor) -> Result<u64> {
    nonnegative("sigma", p.sigma)?;
    positive("G", p.g)?;
    nonnegative("c1", p.c1)?;
    nonnegative("c2", p.c2)?;
    positive("delta", p.delta)?;
    nonnegative("B", p.b)?;
    if p.n == 0 || p.t == 0 || p.r == 0 {
        return Err(contract("n, T and r must be >= 1"));
    }
    let noise = if p.sigma == 0.0 {
        0.0
    } else {
        positive("R0", p.r0)?;
        p.c1 * (p.sigma / (p.g * p.r0)).powi(2)
    };
    let r = p.r as f64;
    let conc = p.c2 * (p.b * p.b * r * r / (p.delta * p.delta)) * ((p.n * p.t) as f64).ln();
    let l0 = noise.max(conc).ceil();
    if !(l0 < u64::MAX as f64) {
        return Err(contract(format!("batch floor overflows: {l0}")));
    }
    Ok((l0 as u64).max(1))
}

/// Distance bound that holds for every `t ≤ T` with probability `1 − p`:
/// `‖X₁ − X*‖² + G²Tη² + √(40Tη²σ²/L)·√(ln(T/p))`.
///
/// The last term comes from a submartingale concentration step over the
/// inner products `⟨X_t − X*, ∇̂_t − ∇f(X_t)⟩`; the intermediate failure
/// probability and deviation level of that argument are not exposed.
pub fn martingale_bound(dist1_sq: f64, g: f64, t: usize, eta: f64, sigma: f64, batch: usize, p: f64) -> Result<f64> {
    nonnegative("initial distance", dist1_sq)?;
    nonnegative("G", g)?;
    nonnegative("eta", eta)?;
    nonnegative("sigma", sigma)?;
    if t == 0 || batch == 0 {
        return Err(contract("T and L must be >= 1"));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(contract(format!("failure probability must lie in (0, 1), got {p}")));
    }
    let tf = t as f64;
    let drift = g * g * tf * eta * eta;
    let conc = (40.0 * tf * eta * eta * sigma * sigma / batch as f64).sqrt() * (tf / p).ln().sqrt();
    Ok(dist1_sq + drift + conc)
}

/// `¼ (rβ + √(2r)B/λ_r)⁻¹ (δ − 4rξ)`: iterates this close to X* keep a
/// rank-r projection when the gradient error is at most `ξ`. Negative means
/// no radius works at that error level.
pub fn lemma4_radius(r: usize, beta: f64, b: f64, lambda_r: f64, delta: f64, xi: f64) -> Result<f64> {
    nonnegative("xi", xi)?;
    nonnegative("delta", delta)?;
    Ok(0.25 * radius_coefficient(r, beta, b, lambda_r)? * (delta - 4.0 * r as f64 * xi))
}

/// `c ε⁻² max{σ², λ_r² r G²}`, without logarithmic factors.
pub fn sample_complexity(eps: f64, sigma: f64, lambda_r: f64, r: usize, g: f64, c: f64) -> Result<f64> {
    positive("epsilon", eps)?;
    nonnegative("sigma", sigma)?;
    nonnegative("lambda_r", lambda_r)?;
    nonnegative("G", g)?;
    nonnegative("c", c)?;
    Ok(c * sigma.powi(2).max(lambda_r * lambda_r * r as f64 * g * g) / (eps * eps))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub zeta: f64,
    pub rank: usize,
    /// `ζ ≤ β r δ`, the exact condition for rank ≤ r.
    pub predicted_low_rank: bool,
}

/// Rank of the projection of `X* − β⁻¹∇f(X*)` onto `(1+ζ)𝒮_n` for each ζ.
pub fn robustness_probe(instance: &SyntheticInstance, zetas: &[f64]) -> Result<Vec<ProbePoint>> {
    robustness_probe_at(
        instance.x_star(),
        &instance.gradient_at_optimum(),
        instance.constants().beta,
        instance.r_star(),
        instance.gap(),
        zetas,
    )
}

/// As [`robustness_probe`] for an arbitrary candidate optimum and its
/// gradient.
pub fn robustness_probe_at(
    x_star: &FactorizedPsd,
    grad: &SymmetricMatrix,
    beta: f64,
    r: usize,
    delta: f64,
    zetas: &[f64],
) -> Result<Vec<ProbePoint>> {
    positive("beta", beta)?;
    let m = x_star.to_dense()?.add_scaled(grad, -1.0 / beta)?;
    let limit = beta * r as f64 * delta;
    zetas
        .iter()
        .map(|&zeta| {
            Ok(ProbePoint {
                zeta,
                rank: project_scaled(&m, zeta)?.rank,
                predicted_low_rank: zeta <= limit,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremInputs {
    pub r: usize,
    pub beta: f64,
    pub b: f64,
    pub g: f64,
    pub sigma: f64,
    pub lambda_r: f64,
    pub delta: f64,
    pub n: usize,
    pub t: usize,
    pub c1: f64,
    pub c2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremConstants {
    pub inputs: TheoremInputs,
    pub r0: f64,
    pub eta: f64,
    pub l0: Option<u64>,
    /// `δ = 0`: no warm-start region exists.
    pub degenerate: bool,
}

impl TheoremConstants {
    pub fn compute(inputs: TheoremInputs) -> Result<Self> {
        let r0 = warm_start_radius(inputs.r, inputs.beta, inputs.b, inputs.lambda_r, inputs.delta)?;
        let eta = theorem_step(r0, inputs.g, inputs.t)?;
        let degenerate = r0 == 0.0;
        let l0 = if degenerate {
            None
        } else {
            Some(min_batch(&BatchFloor {
                sigma: inputs.sigma,
                g: inputs.g,
                r0,
                b: inputs.b,
                r: inputs.r,
                delta: inputs.delta,
                n: inputs.n,
                t: inputs.t,
                c1: inputs.c1,
                c2: inputs.c2,
            })?)
        };
        Ok(Self {
            inputs,
            r0,
            eta,
            l0,
            degenerate,
        })
    }
}

/// Theorem constants of a synthetic instance; `λ_r` is the smallest
/// nonzero eigenvalue of X*.
pub fn synthetic_theorem(inst: &SyntheticInstance, t: usize, c1: f64, c2: f64) -> Result<TheoremConstants> {
    let k = inst.constants();
    let lambda_r = inst.x_star().weights().iter().copied().fold(f64::INFINITY, f64::min);
    TheoremConstants::compute(TheoremInputs {
        r: inst.r_star(),
        beta: k.beta,
        b: k.b,
        g: k.g,
        sigma: k.sigma,
        lambda_r,
        delta: inst.gap(),
        n: inst.n(),
        t,
        c1,
        c2,
    })
}
