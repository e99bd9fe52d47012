use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a documented precondition (bad dimension, rank out of range, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed or degenerate input data.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// The iterative eigensolver did not reach the requested tolerance.
    #[error("eigensolver did not converge after {iterations} matvecs (worst residual {worst_residual:.3e}, tol {tol:.3e})")]
    Convergence {
        iterations: usize,
        tol: f64,
        worst_residual: f64,
        residuals: Vec<f64>,
    },

    /// Refusal to materialize a dense matrix above the configured cap.
    #[error("refusing to materialize a {n}x{n} dense matrix (cap {cap})")]
    DenseCap { n: usize, cap: usize },

    #[error("certificate failed at rank {rank} and strict mode forbids recovery")]
    StrictCertificate { rank: usize },

    #[error("checksum mismatch: expected {expected}, got {actual}")]
    Checksum { expected: String, actual: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn input(msg: impl Into<String>) -> Error {
    Error::Input(msg.into())
}
