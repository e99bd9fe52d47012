//! `lowrank-sgd` command-line tool: `project`, `run`, `diagnose`, `gen`,
//! `fetch`. Exit codes: 0 ok, 1 compute failure, 2 usage or input error.

pub mod config;
pub mod fetch;
pub mod formats;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diagnostics::{
    eigen_gap, lemma4_radius, martingale_bound, robustness_probe_at, sample_complexity, synthetic_theorem, GapCertificate, ProbePoint,
    TheoremConstants, TheoremInputs,
};
use crate::error::{Error, Result};
use crate::linalg::{CompositeOperator, FactorizedPsd, LanczosConfig, SymmetricMatrix};
use crate::problems::{movielens_read, MatrixCompletion, OracleConstants, Problem, SyntheticInstance, SyntheticParams};
use crate::projection::{project_full_certified, project_lowrank, CertificateReport, ProjectionConfig};
use crate::sgd::{run_sgd, run_sweep, RunAbort, RunResult, RunSummary, SgdConfig, Solution, StepSchedule};

use config::{BatchSize, ProblemConfig, RunConfigFile, ScheduleKind, StartPoint, StepSize, SyntheticSource};

pub const EXIT_OK: i32 = 0;
pub const EXIT_COMPUTE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Stream for the synthetic warm-start draw, apart from the run's streams.
const START_STREAM: u64 = 4;

#[derive(Debug, Parser)]
#[command(name = "lowrank-sgd", version, about = "Projected SGD over the spectrahedron with certified low-rank projections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Project a symmetric matrix onto the spectrahedron.
    Project(ProjectArgs),
    /// Run minibatch SGD from a config file or preset.
    Run(RunArgs),
    /// Report eigen-gap, warm-start radius, step size, batch floor and bounds.
    Diagnose(DiagnoseArgs),
    /// Generate a synthetic least-squares instance.
    Gen(GenArgs),
    /// Download MovieLens100K and extract the ratings file.
    Fetch(FetchArgs),
}

#[derive(Debug, Args)]
struct ProjectArgs {
    /// Dense text matrix (`n`, then n rows), or triplets with --triplets.
    input: PathBuf,
    /// Rank of the truncated eigendecomposition.
    #[arg(short, long)]
    rank: usize,
    /// Compute the exact projection even if the rank-r certificate fails.
    #[arg(long)]
    full: bool,
    /// Input is `n` then `i j value` lines.
    #[arg(long)]
    triplets: bool,
    /// Where to write the projected factors.
    #[arg(long)]
    factors: Option<PathBuf>,
    /// Where to write the certificate JSON (default stdout).
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Config file (`key = value` lines or JSON).
    #[arg(required_unless_present = "preset", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Shipped preset name.
    #[arg(long)]
    preset: Option<String>,
    /// Override a config key, e.g. `--set iterations=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Run these seeds concurrently: `a..b` or a comma list.
    #[arg(long)]
    sweep: Option<String>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    /// Synthetic instance document (optimum and constants are known).
    #[arg(long, conflicts_with_all = ["gradient", "optimum"])]
    instance: Option<PathBuf>,
    /// Gradient at the candidate optimum, dense text format.
    #[arg(long, requires = "optimum")]
    gradient: Option<PathBuf>,
    /// Candidate optimum as a factor file.
    #[arg(long, requires = "gradient")]
    optimum: Option<PathBuf>,
    /// Oracle constants when not using --instance.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    g: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Rank (default: rank of the optimum).
    #[arg(short, long)]
    rank: Option<usize>,
    /// Horizon T.
    #[arg(short = 'T', long, default_value_t = 1000)]
    iterations: usize,
    /// Batch size for the distance bound (default: the batch floor).
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    c1: f64,
    #[arg(long, default_value_t = 1.0)]
    c2: f64,
    /// Failure probability of the distance bound.
    #[arg(long, default_value_t = 0.1)]
    p: f64,
    /// ‖X₁ − X*‖_F (default: half the warm-start radius).
    #[arg(long)]
    start_distance: Option<f64>,
    /// ζ values for the robustness probe (default: multiples of βrδ).
    #[arg(long, value_delimiter = ',')]
    zeta: Option<Vec<f64>>,
    /// Target accuracy for the sample-complexity estimate.
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(short)]
    n: usize,
    #[arg(short)]
    r: usize,
    #[arg(long)]
    delta: f64,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = crate::problems::DEFAULT_LEVEL)]
    level: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file (default stdout).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FetchArgs {
    #[arg(long, default_value = fetch::MOVIELENS_URL, conflicts_with = "archive")]
    url: String,
    /// Use a local copy of the archive instead of downloading.
    #[arg(long)]
    archive: Option<PathBuf>,
    #[arg(long, default_value = "data")]
    dest: PathBuf,
    /// Expected SHA-256 of the archive.
    #[arg(long)]
    sha256: Option<String>,
}

/// A failed command: message plus exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Convergence { .. } | Error::StrictCertificate { .. } | Error::DenseCap { .. } | Error::Checksum { .. } => {
                EXIT_COMPUTE
            }
            _ => EXIT_USAGE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn compute_failure(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_COMPUTE,
        message: message.into(),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let res = match cli.command {
        Command::Project(a) => cmd_project(a),
        Command::Run(a) => cmd_run(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Fetch(a) => cmd_fetch(a),
    };
    match res {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => {
            let mut w = create(p)?;
            writeln!(w, "{text}")?;
            w.flush()?;
        }
        None => print_stdout(&text)?,
    }
    Ok(())
}

/// Prints a line; a closed pipe (`| head`) is not an error.
fn print_stdout(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn write_factor_file(path: &Path, x: &FactorizedPsd) -> Result<()> {
    let mut w = create(path)?;
    formats::write_factors(&mut w, x)?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct ProjectOutput {
    n: usize,
    certificate: CertificateReport,
    exact: bool,
    rank: Option<usize>,
    weights: Option<Vec<f64>>,
}

fn cmd_project(a: ProjectArgs) -> CmdResult {
    let op = if a.triplets {
        let s = formats::read_triplets(&a.input)?;
        CompositeOperator::new(s.n()).with_sparse(s, 1.0)?
    } else {
        CompositeOperator::from_dense(formats::read_matrix_text(&a.input)?)
    };
    let n = op.n();
    if a.rank == 0 || a.rank >= n {
        return Err(Error::Input(format!("rank must satisfy 1 <= r < n = {n}, got {}", a.rank)).into());
    }
    let cfg = ProjectionConfig {
        lanczos: LanczosConfig::default().with_seed(a.seed),
        ..ProjectionConfig::default()
    };
    let (certificate, projection, exact) = if a.full {
        let m = op.materialize_capped(cfg.dense_cap)?;
        let (x, rep) = project_full_certified(&m, a.rank, cfg.tie_tolerance)?;
        (rep, Some(x), true)
    } else {
        let p = project_lowrank(&op, a.rank, &cfg)?;
        (p.report, p.projection, false)
    };
    if let (Some(path), Some(x)) = (&a.factors, &projection) {
        write_factor_file(path, x)?;
    }
    let out = ProjectOutput {
        n,
        exact,
        rank: projection.as_ref().map(|x| x.rank()),
        weights: projection.as_ref().map(|x| x.weights().to_vec()),
        certificate,
    };
    write_json(a.report.as_deref(), &out)?;
    if projection.is_none() {
        return Err(compute_failure(format!(
            "rank-{} certificate failed (margin {:.3e}); the projection has higher rank, rerun with --full or a larger rank",
            a.rank, out.certificate.margin
        )));
    }
    Ok(())
}

/// A configured run, ready for [`run_sgd`].
pub struct PreparedRun {
    pub problem: Box<dyn Problem>,
    pub x1: FactorizedPsd,
    pub sgd: SgdConfig,
    pub theorem: Option<TheoremConstants>,
}

fn load_synthetic(source: &SyntheticSource, sigma: Option<f64>) -> Result<SyntheticInstance> {
    let inst = match source {
        SyntheticSource::File(p) => SyntheticInstance::from_json(&std::fs::read_to_string(p)?)?,
        SyntheticSource::Params(p) => {
            let p = SyntheticParams {
                sigma: sigma.unwrap_or(p.sigma),
                ..p.clone()
            };
            return SyntheticInstance::generate(&p);
        }
    };
    match sigma {
        Some(s) => inst.with_sigma(s),
        None => Ok(inst),
    }
}

/// Theorem constants of a synthetic instance over horizon `t`.
pub fn prepare_run(cfg: &RunConfigFile) -> Result<PreparedRun> {
    let seed = cfg.seed;
    let (problem, x1, theorem, rank, batch): (Box<dyn Problem>, _, _, _, _) = match &cfg.problem {
        ProblemConfig::Synthetic { source, sigma } => {
            let inst = load_synthetic(source, *sigma)?;
            let th = synthetic_theorem(&inst, cfg.iterations, cfg.c1, cfg.c2)?;
            let x1 = match cfg.start {
                StartPoint::Optimum => inst.x_star().clone(),
                StartPoint::Warm { radius } => {
                    let radius = radius.unwrap_or(0.5 * th.r0);
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(START_STREAM);
                    inst.warm_start(radius, &mut rng)?
                }
                StartPoint::Svd => unreachable!("rejected by config validation"),
            };
            let batch = match cfg.batch {
                BatchSize::Value(l) => l,
                BatchSize::Theorem => th
                    .l0
                    .ok_or_else(|| Error::Config("batch floor undefined for this instance".into()))?
                    .try_into()
                    .map_err(|_| Error::Config("batch floor too large".into()))?,
                BatchSize::Fraction(_) => unreachable!("rejected by config validation"),
            };
            let rank = cfg.rank.unwrap_or(inst.r_star());
            (Box::new(inst), x1, Some(th), rank, batch)
        }
        ProblemConfig::MovieLens { ratings, tau } => {
            let data = movielens_read(ratings)?;
            let mc = MatrixCompletion::new(data.entries, data.m, data.n, *tau)?;
            let rank = cfg.rank.expect("validated");
            let x1 = mc.warm_start(rank, &LanczosConfig::default().with_seed(seed))?;
            let batch = match cfg.batch {
                BatchSize::Value(l) => l,
                BatchSize::Fraction(f) => ((f * mc.entries().len() as f64).ceil() as usize).max(1),
                BatchSize::Theorem => unreachable!("rejected by config validation"),
            };
            (Box::new(mc), x1, None, rank, batch)
        }
    };
    let eta = match cfg.eta {
        StepSize::Value(e) => e,
        StepSize::Theorem => theorem.expect("synthetic").eta,
    };
    let schedule = match cfg.schedule {
        ScheduleKind::Fixed => StepSchedule::Fixed(eta),
        ScheduleKind::InverseSqrt => StepSchedule::InverseSqrt(eta),
    };
    let mut sgd = SgdConfig::new(cfg.iterations, schedule, batch, rank, seed);
    sgd.output = cfg.output;
    sgd.eval_period = cfg.eval_period;
    sgd.shadow = cfg.shadow;
    sgd.step.certificate = cfg.certificate;
    sgd.step.mode = cfg.mode;
    if let Some(t) = cfg.tie_tolerance {
        sgd.step.projection.tie_tolerance = t;
    }
    if let Some(t) = cfg.lanczos_tol {
        sgd.step.projection.lanczos.tol = t;
    }
    sgd.validate(problem.dim())?;
    Ok(PreparedRun {
        problem,
        x1,
        sgd,
        theorem,
    })
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("bad seed list {s:?} (use a..b or a,b,c)"));
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        (a..b).collect()
    } else {
        s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

fn seeded_path(path: &Path, seed: u64) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.seed{seed}.{}", ext.to_string_lossy()),
        None => format!("{stem}.seed{seed}"),
    };
    path.with_file_name(name)
}

#[derive(Serialize)]
struct RunReport<'a> {
    config: &'a RunConfigFile,
    theorem: Option<TheoremConstants>,
    run: Option<RunSummary>,
    error: Option<String>,
}

fn cmd_run(a: RunArgs) -> CmdResult {
    let cfg = match (&a.config, &a.preset) {
        (Some(p), _) => RunConfigFile::read(p, &a.overrides)?,
        (None, Some(name)) => RunConfigFile::from_text(config::preset(name)?, name, Path::new("."), &a.overrides)?,
        (None, None) => unreachable!("clap requires one"),
    };
    let trace_path = a.trace.clone().or_else(|| cfg.trace.clone());
    let summary_path = a.summary.clone().or_else(|| cfg.summary.clone());
    if a.dry_run {
        write_json(None, &cfg)?;
        return Ok(());
    }
    let prep = prepare_run(&cfg)?;
    let seeds = match &a.sweep {
        Some(s) => Some(parse_seeds(s)?),
        None => None,
    };
    let results: Vec<(u64, std::result::Result<RunResult, RunAbort>)> = match &seeds {
        None => vec![(cfg.seed, run_sgd(prep.problem.as_ref(), &prep.x1, &prep.sgd))],
        Some(seeds) => seeds
            .iter()
            .copied()
            .zip(run_sweep(prep.problem.as_ref(), &prep.x1, &prep.sgd, seeds))
            .collect(),
    };
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (seed, res) in &results {
        let trace = match res {
            Ok(r) => &r.trace,
            Err(abort) => &abort.trace,
        };
        if let Some(p) = &trace_path {
            let p = if seeds.is_some() { seeded_path(p, *seed) } else { p.clone() };
            let mut w = create(&p)?;
            trace.write_csv(&mut w)?;
            w.flush()?;
        }
        if let (Ok(r), Some(path)) = (res, &cfg.solution) {
            let x = match &r.solution {
                Solution::Iterate { x, .. } => x,
                Solution::Averaged(_) => &r.final_iterate,
            };
            let path = if seeds.is_some() { seeded_path(path, *seed) } else { path.clone() };
            write_factor_file(&path, x)?;
        }
        let mut cfg_seed = cfg.clone();
        cfg_seed.seed = *seed;
        reports.push((cfg_seed, res.as_ref().ok().map(|r| r.summary.clone()), res.as_ref().err().map(|e| e.to_string())));
        if let Err(e) = res {
            failures.push(format!("seed {seed}: {e}"));
        }
    }
    let out: Vec<RunReport> = reports
        .iter()
        .map(|(c, s, e)| RunReport {
            config: c,
            theorem: prep.theorem,
            run: s.clone(),
            error: e.clone(),
        })
        .collect();
    if seeds.is_some() {
        write_json(summary_path.as_deref(), &out)?;
    } else {
        write_json(summary_path.as_deref(), &out[0])?;
    }
    if !failures.is_empty() {
        return Err(compute_failure(failures.join("; ")));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct MartingaleReport {
    pub dist1_sq: f64,
    pub batch: usize,
    pub p: f64,
    pub bound: f64,
    /// Whether the bound stays below `R₀²`, the containment the theorem
    /// needs; false when T is too small for the step size and batch.
    pub within_warm_start: bool,
}

#[derive(Debug, Serialize)]
pub struct SampleComplexityReport {
    pub epsilon: f64,
    pub constant: f64,
    pub value: f64,
}

#[derive(Debug, Serialize)]
pub struct DiagnoseReport {
    pub n: usize,
    pub r: usize,
    pub constants: OracleConstants,
    pub lambda_r: f64,
    pub gap: GapCertificate,
    pub assumption_holds: bool,
    pub theorem: Option<TheoremConstants>,
    pub martingale: Option<MartingaleReport>,
    pub lemma4_radius_noiseless: Option<f64>,
    pub sample_complexity: SampleComplexityReport,
    pub robustness: Vec<ProbePoint>,
    pub warnings: Vec<String>,
}

pub struct DiagnoseInput<'a> {
    pub grad: &'a SymmetricMatrix,
    pub x_star: &'a FactorizedPsd,
    pub constants: OracleConstants,
    pub rank: Option<usize>,
    pub iterations: usize,
    pub batch: Option<usize>,
    pub c1: f64,
    pub c2: f64,
    pub p: f64,
    pub start_distance: Option<f64>,
    pub zetas: Option<Vec<f64>>,
    pub epsilon: f64,
}

/// Everything `diagnose` reports, from a gradient at a candidate optimum.
pub fn diagnose(d: &DiagnoseInput) -> Result<DiagnoseReport> {
    let x = d.x_star.pruned(crate::projection::WEIGHT_FLOOR);
    let r = d.rank.unwrap_or(x.rank());
    let n = d.grad.n();
    let mut warnings = Vec::new();
    let gap = eigen_gap(d.grad, r, Some(&x))?;
    let k = d.constants;
    let mut weights = x.weights().to_vec();
    weights.sort_by(|a, b| b.total_cmp(a));
    let lambda_r = if r <= weights.len() { weights[r - 1] } else { 0.0 };
    if !gap.assumption_holds {
        warnings.push(format!("eigen-gap assumption violated at rank {r}: δ = {:e}", gap.delta));
    }
    if let Some(al) = &gap.alignment {
        if !al.aligned {
            warnings.push(format!(
                "range of the optimum is not in the bottom-{r} gradient eigenspace (angle {:.3e}); it may not be optimal",
                al.angle
            ));
        }
    }
    if x.rank() != r {
        warnings.push(format!("optimum has rank {}, diagnosing at rank {r}", x.rank()));
    }
    let (theorem, martingale, lemma4) = if lambda_r > 0.0 {
        let th = TheoremConstants::compute(TheoremInputs {
            r,
            beta: k.beta,
            b: k.b,
            g: k.g,
            sigma: k.sigma,
            lambda_r,
            delta: gap.delta.max(0.0),
            n,
            t: d.iterations,
            c1: d.c1,
            c2: d.c2,
        })?;
        let l4 = lemma4_radius(r, k.beta, k.b, lambda_r, gap.delta.max(0.0), 0.0)?;
        let batch = d.batch.or(th.l0.map(|l| l as usize));
        let mart = match batch {
            Some(batch) => {
                let d1 = d.start_distance.unwrap_or(0.5 * th.r0);
                let bound = martingale_bound(d1 * d1, k.g, d.iterations, th.eta, k.sigma, batch, d.p)?;
                let within = bound <= th.r0 * th.r0;
                if !within {
                    warnings.push(format!(
                        "distance bound {bound:.3e} exceeds R0^2 = {:.3e}: T, batch or start distance outside the theorem's regime",
                        th.r0 * th.r0
                    ));
                }
                Some(MartingaleReport {
                    dist1_sq: d1 * d1,
                    batch,
                    p: d.p,
                    bound,
                    within_warm_start: within,
                })
            }
            None => None,
        };
        (Some(th), mart, Some(l4))
    } else {
        warnings.push(format!("optimum has fewer than {r} positive eigenvalues; theorem constants undefined"));
        (None, None, None)
    };
    let crit = k.beta * r as f64 * gap.delta.max(0.0);
    let zetas = d
        .zetas
        .clone()
        .unwrap_or_else(|| [0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0].iter().map(|m| m * crit).collect());
    let robustness = robustness_probe_at(&x, d.grad, k.beta, r, gap.delta.max(0.0), &zetas)?;
    let sc = SampleComplexityReport {
        epsilon: d.epsilon,
        constant: 1.0,
        value: sample_complexity(d.epsilon, k.sigma, lambda_r, r, k.g, 1.0)?,
    };
    Ok(DiagnoseReport {
        n,
        r,
        constants: k,
        lambda_r,
        assumption_holds: gap.assumption_holds,
        gap,
        theorem,
        martingale,
        lemma4_radius_noiseless: lemma4,
        sample_complexity: sc,
        robustness,
        warnings,
    })
}

fn cmd_diagnose(a: DiagnoseArgs) -> CmdResult {
    let usage = |m: &str| Failure {
        code: EXIT_USAGE,
        message: m.into(),
    };
    let (grad, x_star, constants) = match (&a.instance, &a.gradient, &a.optimum) {
        (Some(p), _, _) => {
            let inst = SyntheticInstance::from_json(&std::fs::read_to_string(p)?)?;
            let k = inst.constants();
            let k = crate::problems::OracleConstants {
                beta: a.beta.unwrap_or(k.beta),
                b: a.b.unwrap_or(k.b),
                g: a.g.unwrap_or(k.g),
                sigma: a.sigma.unwrap_or(k.sigma),
            };
            (inst.gradient_at_optimum(), inst.x_star().clone(), k)
        }
        (None, Some(g), Some(x)) => {
            let grad = formats::read_matrix_text(g)?;
            if !x.exists() {
                return Err(usage(&format!("optimum file {} not found", x.display())));
            }
            let x_star = formats::read_factors(x)?;
            let need = |v: Option<f64>, name: &str| v.ok_or_else(|| usage(&format!("--{name} is required with --gradient")));
            let k = crate::problems::OracleConstants {
                beta: need(a.beta, "beta")?,
                b: need(a.b, "b")?,
                g: need(a.g, "g")?,
                sigma: a.sigma.unwrap_or(0.0),
            };
            (grad, x_star, k)
        }
        _ => return Err(usage("give --instance, or --gradient together with --optimum")),
    };
    if x_star.n() != grad.n() {
        return Err(usage("optimum and gradient dimensions differ"));
    }
    let report = diagnose(&DiagnoseInput {
        grad: &grad,
        x_star: &x_star,
        constants,
        rank: a.rank,
        iterations: a.iterations,
        batch: a.batch,
        c1: a.c1,
        c2: a.c2,
        p: a.p,
        start_distance: a.start_distance,
        zetas: a.zeta,
        epsilon: a.epsilon,
    })?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    write_json(a.out.as_deref(), &report)?;
    Ok(())
}

fn cmd_gen(a: GenArgs) -> CmdResult {
    let mut p = SyntheticParams::new(a.n, a.r, a.delta, a.seed).with_sigma(a.sigma);
    p.level = a.level;
    let inst = SyntheticInstance::generate(&p)?;
    let text = inst.to_json()?;
    match &a.out {
        Some(path) => {
            let mut w = create(path)?;
            writeln!(w, "{text}")?;
            w.flush()?;
        }
        None => print_stdout(&text)?,
    }
    Ok(())
}

fn cmd_fetch(a: FetchArgs) -> CmdResult {
    let source = match a.archive {
        Some(p) => fetch::FetchSource::Archive(p),
        None => fetch::FetchSource::Url(a.url),
    };
    let rep = fetch::fetch_movielens(&source, &a.dest, a.sha256.as_deref())?;
    if a.sha256.is_none() {
        eprintln!("archive sha256 {} (pass --sha256 to enforce)", rep.archive_sha256);
    }
    write_json(None, &rep)?;
    Ok(())
}
