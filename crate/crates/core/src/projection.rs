//! Euclidean projection onto the spectrahedron `𝒮_n = {X ⪰ 0, Tr X = 1}`
//! and its scaled copies `(1+ζ)𝒮_n`.
//!
//! For `M = Σ λ_i v_i v_iᵀ` the projection is `Σ max(0, λ_i − λ) v_i v_iᵀ`
//! where `λ` solves `Σ max(0, λ_i − λ) = mass`. Only the leading part of the
//! spectrum enters, so a rank-`r` projection needs just the top `r + 1`
//! eigenpairs: the extra one feeds the rank certificate
//! `Σ_{i≤r} λ_i ≥ 1 + r·λ_{r+1}`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::linalg::{
    full_eigendecomposition, lanczos_topk, CompositeOperator, EigenPairs, FactorizedPsd, LanczosConfig,
    SymmetricMatrix, DEFAULT_DENSE_CAP,
};

/// Absolute slack on the certificate margin.
pub const DEFAULT_TIE_TOLERANCE: f64 = 1e-9;

/// Weights at or below this are dropped after thresholding.
pub const WEIGHT_FLOOR: f64 = 1e-14;

/// Escalation rank from which a dense eigendecomposition replaces Lanczos.
pub const DENSE_SWITCH_RANK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Threshold {
    pub lambda: f64,
    /// Number of values strictly above `lambda`.
    pub active: usize,
}

/// Solves `Σ max(0, v_i − λ) = mass` for `values` sorted non-increasing.
pub fn simplex_threshold(values: &[f64], mass: f64) -> Result<Threshold> {
    if values.is_empty() {
        return Err(contract("simplex_threshold needs at least one value"));
    }
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(contract(format!("mass must be positive and finite, got {mass}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(contract("values must be finite"));
    }
    if values.windows(2).any(|w| w[0] < w[1]) {
        return Err(contract("values must be sorted non-increasing"));
    }
    let mut cumsum = 0.0;
    let mut best = Threshold {
        lambda: values[0] - mass,
        active: 1,
    };
    for (i, &v) in values.iter().enumerate() {
        cumsum += v;
        let candidate = (cumsum - mass) / (i + 1) as f64;
        if v > candidate {
            best = Threshold {
                lambda: candidate,
                active: i + 1,
            };
        } else {
            break;
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub requested_rank: usize,
    /// Top `r + 1` eigenvalues of the matrix being projected.
    pub computed_eigs: Vec<f64>,
    /// Threshold computed from the top `r` values; exact when certified.
    pub threshold: f64,
    pub certified: bool,
    /// `Σ_{i≤r} λ_i − 1 − r·λ_{r+1}`.
    pub margin: f64,
    /// `|margin| <= tie_tolerance`: certified, but only up to the tolerance.
    pub near_boundary: bool,
}

/// Checks whether the projection of a matrix with leading spectrum
/// `top_eigs` (length `r + 1`) has rank at most `r`.
pub fn rank_certificate(top_eigs: &[f64], r: usize, tie_tolerance: f64) -> Result<CertificateReport> {
    if r == 0 {
        return Err(contract("certificate rank must be >= 1"));
    }
    if top_eigs.len() != r + 1 {
        return Err(contract(format!(
            "rank-{r} certificate needs {} eigenvalues, got {}",
            r + 1,
            top_eigs.len()
        )));
    }
    if !(tie_tolerance >= 0.0) {
        return Err(contract("tie tolerance must be nonnegative"));
    }
    let threshold = simplex_threshold(&top_eigs[..r], 1.0)?.lambda;
    if top_eigs[r - 1] < top_eigs[r] {
        return Err(contract("values must be sorted non-increasing"));
    }
    let margin = top_eigs[..r].iter().sum::<f64>() - 1.0 - r as f64 * top_eigs[r];
    Ok(CertificateReport {
        requested_rank: r,
        computed_eigs: top_eigs.to_vec(),
        threshold,
        certified: margin >= -tie_tolerance,
        margin,
        near_boundary: margin.abs() <= tie_tolerance,
    })
}

/// Thresholds the leading `count` eigenpairs at `lambda`.
fn thresholded(eig: &EigenPairs, count: usize, lambda: f64) -> FactorizedPsd {
    let mut keep = Vec::new();
    let mut weights = Vec::new();
    for (i, &v) in eig.values().iter().take(count).enumerate() {
        let w = v - lambda;
        if w > WEIGHT_FLOOR {
            keep.push(i);
            weights.push(w);
        }
    }
    let basis: DMatrix<f64> = eig.vectors().select_columns(keep.iter());
    FactorizedPsd::from_parts(basis, weights)
}

fn project_spectrum(eig: &EigenPairs, mass: f64) -> Result<(FactorizedPsd, Threshold)> {
    let t = simplex_threshold(eig.values(), mass)?;
    Ok((thresholded(eig, t.active, t.lambda), t))
}

/// Exact projection onto `𝒮_n` from the full spectrum.
pub fn project_full(m: &SymmetricMatrix) -> Result<FactorizedPsd> {
    let eig = full_eigendecomposition(m)?;
    Ok(project_spectrum(&eig, 1.0)?.0)
}

/// Exact projection plus the certificate the rank-`r` path would report.
pub fn project_full_certified(
    m: &SymmetricMatrix,
    r: usize,
    tie_tolerance: f64,
) -> Result<(FactorizedPsd, CertificateReport)> {
    if r == 0 || r >= m.n() {
        return Err(contract(format!("certificate rank must satisfy 1 <= r < n, got r = {r}, n = {}", m.n())));
    }
    let eig = full_eigendecomposition(m)?;
    let report = rank_certificate(&eig.values()[..=r], r, tie_tolerance)?;
    Ok((project_spectrum(&eig, 1.0)?.0, report))
}

#[derive(Clone, Debug)]
pub struct ScaledProjection {
    /// PSD with trace `1 + ζ`.
    pub factor: FactorizedPsd,
    /// Count of weights above [`WEIGHT_FLOOR`].
    pub rank: usize,
    pub threshold: f64,
}

/// Exact projection onto `(1+ζ)𝒮_n`; `ζ = 0` is [`project_full`].
pub fn project_scaled(m: &SymmetricMatrix, zeta: f64) -> Result<ScaledProjection> {
    if !(zeta >= 0.0 && zeta.is_finite()) {
        return Err(contract(format!("zeta must be finite and >= 0, got {zeta}")));
    }
    let eig = full_eigendecomposition(m)?;
    let (factor, t) = project_spectrum(&eig, 1.0 + zeta)?;
    Ok(ScaledProjection {
        rank: factor.rank(),
        factor,
        threshold: t.lambda,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionConfig {
    pub lanczos: LanczosConfig,
    pub tie_tolerance: f64,
    /// Largest dimension the escalation may materialize densely.
    pub dense_cap: usize,
    /// Multiply the eigensolver tolerance by `max(1, ‖op‖)` so that it acts
    /// as a relative tolerance on badly scaled operators.
    pub scale_tolerance: bool,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            lanczos: LanczosConfig::default(),
            tie_tolerance: DEFAULT_TIE_TOLERANCE,
            dense_cap: DEFAULT_DENSE_CAP,
            scale_tolerance: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LowRankProjection {
    pub report: CertificateReport,
    /// Present only when certified.
    pub projection: Option<FactorizedPsd>,
    pub matvecs: usize,
}

/// Rank-`r` projection from the top `r + 1` eigenpairs. When the certificate
/// fails no projection is returned and the caller must escalate.
pub fn project_lowrank(op: &CompositeOperator, r: usize, cfg: &ProjectionConfig) -> Result<LowRankProjection> {
    let n = op.n();
    if r == 0 || r >= n {
        return Err(contract(format!("low-rank projection needs 1 <= r < n, got r = {r}, n = {n}")));
    }
    let eig = lanczos_topk(op, r + 1, &eigensolver_config(op, cfg))?;
    let report = rank_certificate(eig.values(), r, cfg.tie_tolerance)?;
    let projection = report
        .certified
        .then(|| thresholded(&eig, r, report.threshold));
    Ok(LowRankProjection {
        report,
        projection,
        matvecs: eig.matvecs(),
    })
}

#[derive(Clone, Debug)]
pub struct EscalatedProjection {
    pub projection: FactorizedPsd,
    /// Report at the originally requested rank.
    pub first_report: CertificateReport,
    /// Rank at which the projection was finally certified (or `n` when the
    /// full spectrum was needed).
    pub certified_rank: usize,
    pub ranks_tried: Vec<usize>,
    pub matvecs: usize,
    pub used_full_spectrum: bool,
}

/// Projects at rank `r`, doubling the eigendecomposition rank
/// (`r → min(2(r+1), n−1)`) until the certificate passes. When the rank
/// budget reaches `n − 1` without success the full spectrum is used; so
/// it is once the budget passes both `n/10` and [`DENSE_SWITCH_RANK`] and `n` is
/// within the dense cap.
/// `max_rank` caps the escalation; exceeding it is an error.
pub fn project_with_escalation(
    op: &CompositeOperator,
    r: usize,
    cfg: &ProjectionConfig,
    max_rank: Option<usize>,
) -> Result<EscalatedProjection> {
    let n = op.n();
    let mut rank = r;
    let mut ranks_tried = Vec::new();
    let mut matvecs = 0;
    let mut first_report = None;
    loop {
        if rank >= n {
            let (projection, _) = full_spectrum_projection(op, cfg)?;
            let certified_rank = projection.rank();
            return Ok(EscalatedProjection {
                projection,
                first_report: first_report.expect("low-rank attempt precedes the full fallback"),
                certified_rank,
                ranks_tried,
                matvecs,
                used_full_spectrum: true,
            });
        }
        ranks_tried.push(rank);
        let attempt = project_lowrank(op, rank, cfg)?;
        matvecs += attempt.matvecs;
        let certified = attempt.report.certified;
        if first_report.is_none() {
            first_report = Some(attempt.report);
        }
        if certified {
            return Ok(EscalatedProjection {
                projection: attempt.projection.expect("certified projection"),
                first_report: first_report.expect("set above"),
                certified_rank: rank,
                ranks_tried,
                matvecs,
                used_full_spectrum: false,
            });
        }
        let next = if rank + 1 >= n - 1 { n } else { (2 * (rank + 1)).min(n - 1) };
        if let Some(cap) = max_rank {
            if next > cap {
                return Err(crate::Error::StrictCertificate { rank });
            }
        }
        log::debug!("certificate failed at rank {rank}, escalating to {next}");
        // Lanczos at k ~ n is slower than one dense eigendecomposition.
        rank = if next < n && next >= DENSE_SWITCH_RANK && 10 * next > n && n <= cfg.dense_cap { n } else { next };
    }
}

/// Exact projection of an implicit operator, densely when allowed.
pub fn full_spectrum_projection(op: &CompositeOperator, cfg: &ProjectionConfig) -> Result<(FactorizedPsd, Threshold)> {
    let eig = if op.n() <= cfg.dense_cap {
        full_eigendecomposition(&op.materialize_capped(cfg.dense_cap)?)?
    } else {
        lanczos_topk(op, op.n(), &eigensolver_config(op, cfg))?
    };
    project_spectrum(&eig, 1.0)
}

fn eigensolver_config(op: &CompositeOperator, cfg: &ProjectionConfig) -> LanczosConfig {
    let mut lc = cfg.lanczos.clone();
    if cfg.scale_tolerance {
        lc.tol *= op.norm_bound().max(1.0);
    }
    lc
}
