//! Minibatch projected SGD over the spectrahedron:
//! `X_{t+1} = Π[X_t − η_t ∇̂_t]`, where `∇̂_t` averages `L` oracle draws and
//! the projection is computed from a rank-(r+1) eigendecomposition of the
//! implicit operator `X_t − η_t ∇̂_t` and checked by the rank certificate.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::linalg::{CompositeOperator, FactorizedPsd};
use crate::problems::{Gradient, Problem};
use crate::projection::{
    full_spectrum_projection, project_full, project_full_certified, project_lowrank, project_with_escalation,
    CertificateReport, ProjectionConfig,
};

pub const DEFAULT_EVAL_PERIOD: usize = 50;

pub const CSV_HEADER: &str = "t,certified,margin,rank,eig_iters,objective,step_seconds";

// Named substreams of the run seed.
const ORACLE_STREAM: u64 = 1;
const OUTPUT_STREAM: u64 = 2;
const EIGEN_STREAM: u64 = 3;

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepSchedule {
    Fixed(f64),
    /// `η_t = η₀/√t`.
    InverseSqrt(f64),
}

impl StepSchedule {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::Fixed(eta) => eta,
            StepSchedule::InverseSqrt(eta0) => eta0 / (t as f64).sqrt(),
        }
    }

    fn base(&self) -> f64 {
        match *self {
            StepSchedule::Fixed(e) | StepSchedule::InverseSqrt(e) => e,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputOption {
    /// A uniformly sampled iterate `X_{t₀}`.
    I,
    /// The average of all iterates.
    II,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertificatePolicy {
    /// Retry at rank `min(2(r+1), n−1)`, then with the full spectrum.
    Escalate { max_rank: Option<usize> },
    /// Compute the exact projection directly and flag the step.
    DenseFallback,
    /// Abort the run.
    Strict,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionMode {
    LowRank,
    /// Materialize and eigendecompose fully on every step (reference runs).
    Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepPolicy {
    pub rank: usize,
    pub certificate: CertificatePolicy,
    pub mode: ProjectionMode,
    pub projection: ProjectionConfig,
}

impl StepPolicy {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            certificate: CertificatePolicy::Escalate { max_rank: None },
            mode: ProjectionMode::LowRank,
            projection: ProjectionConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recovery {
    None,
    Escalated { to_rank: usize },
    FullSpectrum,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub next: FactorizedPsd,
    /// Certificate at the requested rank.
    pub report: CertificateReport,
    pub matvecs: usize,
    pub recovery: Recovery,
}

/// One projected step `Π[X − η∇̂]`.
pub fn step(x: &FactorizedPsd, grad: &Gradient, eta: f64, policy: &StepPolicy) -> Result<StepOutcome> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(contract(format!("step size must be finite and >= 0, got {eta}")));
    }
    let n = x.n();
    let mut op = CompositeOperator::new(n).with_lowrank(x.clone(), 1.0 - eta * grad.iterate_coeff)?;
    if eta > 0.0 {
        if let Some(d) = &grad.dense {
            op = op.with_dense(d.clone(), -eta)?;
        }
        if let Some(s) = &grad.sparse {
            op = op.with_sparse(s.clone(), -eta)?;
        }
    }
    let r = policy.rank;
    let cfg = &policy.projection;
    match policy.mode {
        ProjectionMode::Dense => {
            let (next, report) = project_full_certified(&op.materialize_capped(cfg.dense_cap)?, r, cfg.tie_tolerance)?;
            Ok(StepOutcome {
                next,
                report,
                matvecs: 0,
                recovery: Recovery::None,
            })
        }
        ProjectionMode::LowRank => match policy.certificate {
            CertificatePolicy::Escalate { max_rank } => {
                let esc = project_with_escalation(&op, r, cfg, max_rank)?;
                let recovery = if esc.used_full_spectrum {
                    Recovery::FullSpectrum
                } else if esc.certified_rank != r {
                    Recovery::Escalated {
                        to_rank: esc.certified_rank,
                    }
                } else {
                    Recovery::None
                };
                Ok(StepOutcome {
                    next: esc.projection,
                    report: esc.first_report,
                    matvecs: esc.matvecs,
                    recovery,
                })
            }
            CertificatePolicy::DenseFallback | CertificatePolicy::Strict => {
                let lp = project_lowrank(&op, r, cfg)?;
                match lp.projection {
                    Some(next) => Ok(StepOutcome {
                        next,
                        report: lp.report,
                        matvecs: lp.matvecs,
                        recovery: Recovery::None,
                    }),
                    None if policy.certificate == CertificatePolicy::Strict => Err(Error::StrictCertificate { rank: r }),
                    None => Ok(StepOutcome {
                        next: full_spectrum_projection(&op, cfg)?.0,
                        report: lp.report,
                        matvecs: lp.matvecs,
                        recovery: Recovery::FullSpectrum,
                    }),
                }
            }
        },
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SgdConfig {
    /// Horizon `T`: iterates `X_1..X_T`, i.e. `T − 1` steps.
    pub iterations: usize,
    pub schedule: StepSchedule,
    pub batch: usize,
    pub seed: u64,
    pub output: OutputOption,
    pub eval_period: usize,
    /// Also compute the dense projection on every step and record the
    /// Frobenius difference.
    pub shadow: bool,
    pub step: StepPolicy,
}

impl SgdConfig {
    pub fn new(iterations: usize, schedule: StepSchedule, batch: usize, rank: usize, seed: u64) -> Self {
        Self {
            iterations,
            schedule,
            batch,
            seed,
            output: OutputOption::II,
            eval_period: DEFAULT_EVAL_PERIOD,
            shadow: false,
            step: StepPolicy::new(rank),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let r = self.step.rank;
        if self.iterations == 0 {
            return Err(contract("iterations must be >= 1"));
        }
        if self.batch == 0 {
            return Err(contract("batch size must be >= 1"));
        }
        if r == 0 || r >= dim {
            return Err(contract(format!("rank must satisfy 1 <= r < {dim}, got {r}")));
        }
        let eta = self.schedule.base();
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(contract(format!("step size must be positive, got {eta}")));
        }
        if self.eval_period == 0 {
            return Err(contract("objective evaluation period must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub certified: bool,
    /// Absent for `t = 1`, which is the initial point.
    pub margin: Option<f64>,
    pub near_boundary: bool,
    /// Rank of `X_t`.
    pub rank: usize,
    pub eig_iters: usize,
    pub recovery: Recovery,
    pub step_seconds: f64,
    /// Objective at the running average of `X_1..X_t`, on evaluation steps.
    pub objective: Option<f64>,
    /// Objective at `X_t`, on evaluation steps.
    pub iterate_objective: Option<f64>,
    /// `‖X_t − X*‖_F²` when the problem knows its optimum.
    pub distance_sq: Option<f64>,
    pub shadow_diff: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunTrace {
    pub records: Vec<StepRecord>,
}

impl RunTrace {
    pub fn max_rank(&self) -> usize {
        self.records.iter().map(|r| r.rank).max().unwrap_or(0)
    }

    /// Fraction of steps (`t ≥ 2`) whose certificate passed at the
    /// requested rank; 1 when there were no steps.
    pub fn fraction_certified(&self) -> f64 {
        let steps = self.records.len().saturating_sub(1);
        if steps == 0 {
            return 1.0;
        }
        self.records[1..].iter().filter(|r| r.certified).count() as f64 / steps as f64
    }

    pub fn all_certified(&self) -> bool {
        self.records.iter().all(|r| r.certified)
    }

    pub fn max_distance_sq(&self) -> Option<f64> {
        self.records.iter().filter_map(|r| r.distance_sq).reduce(f64::max)
    }

    pub fn max_shadow_diff(&self) -> Option<f64> {
        self.records.iter().filter_map(|r| r.shadow_diff).reduce(f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.records {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.t,
                r.certified,
                opt(r.margin),
                r.rank,
                r.eig_iters,
                opt(r.objective),
                r.step_seconds
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub iterations: usize,
    pub seed: u64,
    pub output: OutputOption,
    pub t0: Option<usize>,
    pub final_objective: f64,
    pub optimal_value: Option<f64>,
    pub max_rank: usize,
    pub fraction_certified: f64,
    pub escalated_steps: usize,
    pub full_spectrum_steps: usize,
    pub max_distance_sq: Option<f64>,
    pub max_shadow_diff: Option<f64>,
    pub total_seconds: f64,
}

/// `(1/T) Σ X_t`, kept as the averaged linear summary of the iterates.
#[derive(Clone, Debug, PartialEq)]
pub struct AveragedSolution {
    pub summary: Vec<f64>,
    pub count: usize,
    pub objective: f64,
}

#[derive(Clone, Debug)]
pub enum Solution {
    Iterate { t0: usize, x: FactorizedPsd },
    Averaged(AveragedSolution),
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub solution: Solution,
    pub final_iterate: FactorizedPsd,
    pub trace: RunTrace,
    pub summary: RunSummary,
}

#[derive(Debug, thiserror::Error)]
#[error("run aborted at t = {at}: {error}")]
pub struct RunAbort {
    pub at: usize,
    #[source]
    pub error: Error,
    /// Records up to the failing step.
    pub trace: RunTrace,
}

impl From<RunAbort> for Error {
    fn from(a: RunAbort) -> Self {
        a.error
    }
}

/// Draws the option-I index `t₀ ∈ {1..T}` from the run's output substream.
pub fn select_output_index(seed: u64, iterations: usize) -> usize {
    substream(seed, OUTPUT_STREAM).random_range(1..=iterations)
}

pub fn run_sgd<P: Problem + ?Sized>(
    problem: &P,
    x1: &FactorizedPsd,
    cfg: &SgdConfig,
) -> std::result::Result<RunResult, RunAbort> {
    let abort = |at: usize, error: Error, records: Vec<StepRecord>| RunAbort {
        at,
        error,
        trace: RunTrace { records },
    };
    let n = problem.dim();
    if let Err(e) = cfg.validate(n) {
        return Err(abort(0, e, Vec::new()));
    }
    if x1.n() != n {
        return Err(abort(0, contract(format!("initial point has dimension {}, problem {n}", x1.n())), Vec::new()));
    }
    if !x1.is_on_spectrahedron(1e-9) {
        return Err(abort(0, contract("initial point is not on the spectrahedron"), Vec::new()));
    }
    if x1.rank() > cfg.step.rank {
        return Err(abort(
            0,
            contract(format!("initial point has rank {} > {}", x1.rank(), cfg.step.rank)),
            Vec::new(),
        ));
    }

    let started = Instant::now();
    let big_t = cfg.iterations;
    let mut oracle_rng = substream(cfg.seed, ORACLE_STREAM);
    let mut eigen_rng = substream(cfg.seed, EIGEN_STREAM);
    let t0 = (cfg.output == OutputOption::I).then(|| select_output_index(cfg.seed, big_t));
    let optimum = problem.optimum();

    let mut x = x1.clone();
    let mut snapshot = (t0 == Some(1)).then(|| x.clone());
    let mut sum = problem.linear_summary(&x);
    let mut records = Vec::with_capacity(big_t);
    let evaluate = |t: usize, x: &FactorizedPsd, sum: &[f64], rec: &mut StepRecord| {
        if t == 1 || t == big_t || t.is_multiple_of(cfg.eval_period) {
            let avg: Vec<f64> = sum.iter().map(|v| v / t as f64).collect();
            rec.objective = Some(problem.objective_from_summary(&avg));
            rec.iterate_objective = Some(problem.objective(x));
        }
    };

    let mut first = StepRecord {
        t: 1,
        certified: true,
        margin: None,
        near_boundary: false,
        rank: x.rank(),
        eig_iters: 0,
        recovery: Recovery::None,
        step_seconds: 0.0,
        objective: None,
        iterate_objective: None,
        distance_sq: optimum.map(|o| x.distance_sq(o)),
        shadow_diff: None,
    };
    evaluate(1, &x, &sum, &mut first);
    records.push(first);

    let mut escalated_steps = 0;
    let mut full_spectrum_steps = 0;
    for t in 1..big_t {
        let clock = Instant::now();
        let eta = cfg.schedule.at(t);
        let grad = problem.sample_gradient(&x, cfg.batch, &mut oracle_rng);
        let mut policy = cfg.step.clone();
        policy.projection.lanczos.seed = eigen_rng.next_u64();
        let out = match step(&x, &grad, eta, &policy) {
            Ok(o) => o,
            Err(e) => return Err(abort(t + 1, e, records)),
        };
        let shadow_diff = if cfg.shadow && cfg.step.mode == ProjectionMode::LowRank {
            match shadow_difference(&x, &grad, eta, &out.next) {
                Ok(d) => Some(d),
                Err(e) => return Err(abort(t + 1, e, records)),
            }
        } else {
            None
        };
        match out.recovery {
            Recovery::None => {}
            Recovery::Escalated { .. } => escalated_steps += 1,
            Recovery::FullSpectrum => full_spectrum_steps += 1,
        }
        x = out.next;
        for (s, v) in sum.iter_mut().zip(problem.linear_summary(&x)) {
            *s += v;
        }
        if t0 == Some(t + 1) {
            snapshot = Some(x.clone());
        }
        let mut rec = StepRecord {
            t: t + 1,
            certified: out.report.certified,
            margin: Some(out.report.margin),
            near_boundary: out.report.near_boundary,
            rank: x.rank(),
            eig_iters: out.matvecs,
            recovery: out.recovery,
            step_seconds: 0.0,
            objective: None,
            iterate_objective: None,
            distance_sq: optimum.map(|o| x.distance_sq(o)),
            shadow_diff,
        };
        evaluate(t + 1, &x, &sum, &mut rec);
        rec.step_seconds = clock.elapsed().as_secs_f64();
        records.push(rec);
    }

    let avg: Vec<f64> = sum.iter().map(|v| v / big_t as f64).collect();
    let averaged = AveragedSolution {
        objective: problem.objective_from_summary(&avg),
        summary: avg,
        count: big_t,
    };
    let trace = RunTrace { records };
    let solution = match (t0, snapshot) {
        (Some(t0), Some(x)) => Solution::Iterate { t0, x },
        _ => Solution::Averaged(averaged.clone()),
    };
    let final_objective = match &solution {
        Solution::Iterate { x, .. } => problem.objective(x),
        Solution::Averaged(a) => a.objective,
    };
    let summary = RunSummary {
        iterations: big_t,
        seed: cfg.seed,
        output: cfg.output,
        t0,
        final_objective,
        optimal_value: problem.optimal_value(),
        max_rank: trace.max_rank(),
        fraction_certified: trace.fraction_certified(),
        escalated_steps,
        full_spectrum_steps,
        max_distance_sq: trace.max_distance_sq(),
        max_shadow_diff: trace.max_shadow_diff(),
        total_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(RunResult {
        solution,
        final_iterate: x,
        trace,
        summary,
    })
}

fn shadow_difference(x: &FactorizedPsd, grad: &Gradient, eta: f64, next: &FactorizedPsd) -> Result<f64> {
    let m = x.to_dense()?.add_scaled(&grad.to_dense(x)?, -eta)?;
    let exact = project_full(&m)?.to_dense()?;
    Ok((next.to_dense()?.as_matrix() - exact.as_matrix()).norm())
}

/// Independent runs of the same configuration under different seeds.
pub fn run_sweep<P: Problem + ?Sized>(
    problem: &P,
    x1: &FactorizedPsd,
    cfg: &SgdConfig,
    seeds: &[u64],
) -> Vec<std::result::Result<RunResult, RunAbort>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let cfg = SgdConfig { seed, ..cfg.clone() };
            run_sgd(problem, x1, &cfg)
        })
        .collect()
}
