//! C ABI over the lowrank-sgd library.
//!
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `*_free` function. Every fallible call returns an
//! [`LsgdStatus`]; on failure [`lsgd_last_error_message`] describes what went
//! wrong on the calling thread. Matrices are passed row-major, factor bases
//! are returned column-major (`n × rank`).

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lowrank_sgd::diagnostics::synthetic_theorem;
use lowrank_sgd::linalg::{CompositeOperator, FactorizedPsd, SymmetricMatrix};
use lowrank_sgd::problems::{Problem, SyntheticInstance, SyntheticParams};
use lowrank_sgd::projection::{project_full, project_lowrank, simplex_threshold, ProjectionConfig};
use lowrank_sgd::sgd::{run_sgd, OutputOption, SgdConfig, StepSchedule};
use lowrank_sgd::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LsgdStatus {
    Ok = 0,
    NullPointer = 1,
    /// Argument out of range or inconsistent with the others.
    InvalidArgument = 2,
    Parse = 3,
    Convergence = 4,
    /// A strict certificate policy met a failing certificate.
    Certificate = 5,
    DenseCap = 6,
    Io = 7,
    /// A Rust panic was caught at the boundary.
    Panic = 8,
}

impl From<&Error> for LsgdStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Contract(_) | Error::Input(_) | Error::Config(_) => Self::InvalidArgument,
            Error::Parse { .. } | Error::Json(_) => Self::Parse,
            Error::Convergence { .. } => Self::Convergence,
            Error::StrictCertificate { .. } => Self::Certificate,
            Error::DenseCap { .. } => Self::DenseCap,
            Error::Io(_) | Error::Checksum { .. } => Self::Io,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(LsgdStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure((&e).into(), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(LsgdStatus::NullPointer, format!("{what} is NULL"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(LsgdStatus::InvalidArgument, msg.into())
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LsgdStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LsgdStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            LsgdStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn lsgd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lsgd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ------------------------------------------------------------------ matrix

/// Dense symmetric matrix. Opaque.
pub struct LsgdMatrix(SymmetricMatrix);

/// Copies an `n × n` row-major array; the input is symmetrized.
#[no_mangle]
pub unsafe extern "C" fn lsgd_matrix_new(n: usize, data: *const f64, out: *mut *mut LsgdMatrix) -> LsgdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let len = n.checked_mul(n).ok_or_else(|| invalid("n * n overflows"))?;
        let m = SymmetricMatrix::from_row_major(n, slice(data, len, "data")?)?;
        put(out, LsgdMatrix(m));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lsgd_matrix_free(m: *mut LsgdMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

// ------------------------------------------------------------------ factor

/// PSD matrix `V diag(w) Vᵀ` with orthonormal `V`. Opaque.
pub struct LsgdFactor(FactorizedPsd);

#[no_mangle]
pub unsafe extern "C" fn lsgd_factor_free(f: *mut LsgdFactor) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// Dimension `n`, or 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn lsgd_factor_dim(f: *const LsgdFactor) -> usize {
    f.as_ref().map_or(0, |f| f.0.n())
}

/// Number of stored components, or 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn lsgd_factor_rank(f: *const LsgdFactor) -> usize {
    f.as_ref().map_or(0, |f| f.0.rank())
}

/// Copies the `rank` weights into `out` (length `len`, at least `rank`).
#[no_mangle]
pub unsafe extern "C" fn lsgd_factor_weights(f: *const LsgdFactor, out: *mut f64, len: usize) -> LsgdStatus {
    guard(|| {
        let f = &borrow(f, "factor")?.0;
        let w = f.weights();
        if len < w.len() {
            return Err(invalid(format!("buffer holds {len} values, need {}", w.len())));
        }
        slice_mut(out, w.len(), "out")?.copy_from_slice(w);
        Ok(())
    })
}

/// Copies the `n × rank` basis column-major into `out`.
#[no_mangle]
pub unsafe extern "C" fn lsgd_factor_basis(f: *const LsgdFactor, out: *mut f64, len: usize) -> LsgdStatus {
    guard(|| {
        let b = borrow(f, "factor")?.0.basis();
        let need = b.len();
        if len < need {
            return Err(invalid(format!("buffer holds {len} values, need {need}")));
        }
        slice_mut(out, need, "out")?.copy_from_slice(b.as_slice());
        Ok(())
    })
}

/// Writes the dense `n × n` matrix row-major into `out`.
#[no_mangle]
pub unsafe extern "C" fn lsgd_factor_to_dense(f: *const LsgdFactor, out: *mut f64, len: usize) -> LsgdStatus {
    guard(|| {
        let d = borrow(f, "factor")?.0.to_dense()?;
        let n = d.n();
        if len < n * n {
            return Err(invalid(format!("buffer holds {len} values, need {}", n * n)));
        }
        let out = slice_mut(out, n * n, "out")?;
        // Symmetric, so column-major storage reads the same as row-major.
        out.copy_from_slice(d.as_matrix().as_slice());
        Ok(())
    })
}

/// Squared Frobenius distance between two factors of equal dimension.
#[no_mangle]
pub unsafe extern "C" fn lsgd_factor_distance_sq(
    a: *const LsgdFactor,
    b: *const LsgdFactor,
    out: *mut f64,
) -> LsgdStatus {
    guard(|| {
        let (a, b) = (&borrow(a, "a")?.0, &borrow(b, "b")?.0);
        if a.n() != b.n() {
            return Err(invalid(format!("dimensions differ: {} vs {}", a.n(), b.n())));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = a.distance_sq(b);
        Ok(())
    })
}

// -------------------------------------------------------------- projection

/// Solves `Σ max(0, v_i − λ) = mass` for `values` sorted non-increasing.
#[no_mangle]
pub unsafe extern "C" fn lsgd_simplex_threshold(
    values: *const f64,
    len: usize,
    mass: f64,
    lambda: *mut f64,
) -> LsgdStatus {
    guard(|| {
        let v = slice(values, len, "values")?;
        if lambda.is_null() {
            return Err(null("lambda"));
        }
        *lambda = simplex_threshold(v, mass)?.lambda;
        Ok(())
    })
}

/// Exact projection onto `{X ⪰ 0, tr X = 1}` from the full spectrum.
#[no_mangle]
pub unsafe extern "C" fn lsgd_project_full(m: *const LsgdMatrix, out: *mut *mut LsgdFactor) -> LsgdStatus {
    guard(|| {
        let m = &borrow(m, "matrix")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        put(out, LsgdFactor(project_full(m)?));
        Ok(())
    })
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LsgdCertificate {
    /// 1 when the rank-r projection is exact.
    pub certified: i32,
    /// `Σ_{i≤r} λ_i − 1 − r·λ_{r+1}`.
    pub margin: f64,
    pub threshold: f64,
}

/// Rank-`r` projection from the top `r + 1` eigenpairs. When the certificate
/// fails the call still succeeds, `*out` is set to NULL and `report`
/// explains why.
#[no_mangle]
pub unsafe extern "C" fn lsgd_project_lowrank(
    m: *const LsgdMatrix,
    r: usize,
    out: *mut *mut LsgdFactor,
    report: *mut LsgdCertificate,
) -> LsgdStatus {
    guard(|| {
        let m = &borrow(m, "matrix")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let p = project_lowrank(&CompositeOperator::from_dense(m.clone()), r, &ProjectionConfig::default())?;
        if let Some(rep) = report.as_mut() {
            *rep = LsgdCertificate {
                certified: p.report.certified.into(),
                margin: p.report.margin,
                threshold: p.report.threshold,
            };
        }
        if let Some(x) = p.projection {
            put(out, LsgdFactor(x));
        }
        Ok(())
    })
}

// --------------------------------------------------------------- synthetic

/// Synthetic least-squares instance with a known optimum. Opaque.
pub struct LsgdSynthetic(SyntheticInstance);

#[no_mangle]
pub unsafe extern "C" fn lsgd_synthetic_generate(
    n: usize,
    r_star: usize,
    delta: f64,
    sigma: f64,
    seed: u64,
    out: *mut *mut LsgdSynthetic,
) -> LsgdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inst = SyntheticInstance::generate(&SyntheticParams::new(n, r_star, delta, seed).with_sigma(sigma))?;
        put(out, LsgdSynthetic(inst));
        Ok(())
    })
}

/// Loads an instance from the JSON document written by `lowrank-sgd gen`.
#[no_mangle]
pub unsafe extern "C" fn lsgd_synthetic_from_json(json: *const c_char, out: *mut *mut LsgdSynthetic) -> LsgdStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(json).to_str().map_err(|e| invalid(format!("json is not UTF-8: {e}")))?;
        put(out, LsgdSynthetic(SyntheticInstance::from_json(text)?));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lsgd_synthetic_free(s: *mut LsgdSynthetic) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Eigengap of the gradient at the optimum, or NaN for NULL.
#[no_mangle]
pub unsafe extern "C" fn lsgd_synthetic_gap(s: *const LsgdSynthetic) -> f64 {
    s.as_ref().map_or(f64::NAN, |s| s.0.gap())
}

/// Copy of the optimum X*.
#[no_mangle]
pub unsafe extern "C" fn lsgd_synthetic_optimum(s: *const LsgdSynthetic, out: *mut *mut LsgdFactor) -> LsgdStatus {
    guard(|| {
        let s = &borrow(s, "instance")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        put(out, LsgdFactor(s.x_star().clone()));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lsgd_synthetic_objective(
    s: *const LsgdSynthetic,
    x: *const LsgdFactor,
    out: *mut f64,
) -> LsgdStatus {
    guard(|| {
        let (s, x) = (&borrow(s, "instance")?.0, &borrow(x, "point")?.0);
        if x.n() != s.n() {
            return Err(invalid(format!("point has dimension {}, instance {}", x.n(), s.n())));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = s.objective(x);
        Ok(())
    })
}

// --------------------------------------------------------------------- run

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LsgdRunOptions {
    /// Horizon T.
    pub iterations: usize,
    /// Fixed step size; 0 selects the theorem step for this instance and T.
    pub eta: f64,
    /// Minibatch size; 0 selects the theorem batch size.
    pub batch: usize,
    /// Projection rank; 0 uses the rank of X*.
    pub rank: usize,
    pub seed: u64,
    /// 1 returns a sampled iterate, 2 the average of all iterates.
    pub output_option: i32,
    /// Distance of the warm start from X*; negative selects half the
    /// theorem radius. Ignored when a start point is passed.
    pub start_radius: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LsgdRunSummary {
    pub final_objective: f64,
    pub fraction_certified: f64,
    pub max_rank: usize,
    pub escalated_steps: usize,
    pub full_spectrum_steps: usize,
    /// `max_t ‖X_t − X*‖_F²`.
    pub max_distance_sq: f64,
    pub eta: f64,
    pub batch: usize,
    pub total_seconds: f64,
}

#[no_mangle]
pub extern "C" fn lsgd_run_options_default() -> LsgdRunOptions {
    LsgdRunOptions {
        iterations: 1000,
        eta: 0.0,
        batch: 0,
        rank: 0,
        seed: 0,
        output_option: 2,
        start_radius: -1.0,
    }
}

/// Runs SGD on a synthetic instance. `start` may be NULL (warm start per
/// `opts.start_radius`); `final_iterate` may be NULL when not wanted.
#[no_mangle]
pub unsafe extern "C" fn lsgd_synthetic_run(
    s: *const LsgdSynthetic,
    start: *const LsgdFactor,
    opts: *const LsgdRunOptions,
    summary: *mut LsgdRunSummary,
    final_iterate: *mut *mut LsgdFactor,
) -> LsgdStatus {
    guard(|| {
        let inst = &borrow(s, "instance")?.0;
        let o = *borrow(opts, "opts")?;
        if summary.is_null() {
            return Err(null("summary"));
        }
        if !final_iterate.is_null() {
            *final_iterate = ptr::null_mut();
        }
        let output = match o.output_option {
            1 => OutputOption::I,
            2 => OutputOption::II,
            k => return Err(invalid(format!("output_option must be 1 or 2, got {k}"))),
        };
        let th = synthetic_theorem(inst, o.iterations.max(1), 1.0, 1.0)?;
        let eta = if o.eta > 0.0 { o.eta } else { th.eta };
        let batch = match (o.batch, th.l0) {
            (0, Some(l)) => usize::try_from(l).map_err(|_| invalid("theorem batch size overflows"))?,
            (0, None) => return Err(invalid("instance has no eigengap; pass an explicit batch size")),
            (b, _) => b,
        };
        let rank = if o.rank == 0 { inst.r_star() } else { o.rank };
        let x1 = match start.as_ref() {
            Some(f) => f.0.clone(),
            None => {
                let radius = if o.start_radius >= 0.0 { o.start_radius } else { 0.5 * th.r0 };
                inst.warm_start(radius, &mut ChaCha8Rng::seed_from_u64(o.seed))?
            }
        };
        let mut cfg = SgdConfig::new(o.iterations, StepSchedule::Fixed(eta), batch, rank, o.seed);
        cfg.output = output;
        let run = run_sgd(inst, &x1, &cfg).map_err(Error::from)?;
        *summary = LsgdRunSummary {
            final_objective: run.summary.final_objective,
            fraction_certified: run.summary.fraction_certified,
            max_rank: run.summary.max_rank,
            escalated_steps: run.summary.escalated_steps,
            full_spectrum_steps: run.summary.full_spectrum_steps,
            max_distance_sq: run.summary.max_distance_sq.unwrap_or(f64::NAN),
            eta,
            batch,
            total_seconds: run.summary.total_seconds,
        };
        if !final_iterate.is_null() {
            put(final_iterate, LsgdFactor(run.final_iterate));
        }
        Ok(())
    })
}
