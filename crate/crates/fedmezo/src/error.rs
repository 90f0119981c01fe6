//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the simulator and its calculators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid adapter rank {rank}: must be in 1..=min({d_in}, {d_out})")]
    InvalidRank {
        rank: usize,
        d_in: usize,
        d_out: usize,
    },

    #[error("power iteration did not converge after {iters} iterations (last residual {residual:.3e})")]
    NoConvergence { iters: usize, residual: f64 },

    #[error("non-finite loss during perturbed evaluation (parameter norm {param_norm:.3e})")]
    NumericalOverflow { param_norm: f64 },

    #[error("degenerate regression: {0}")]
    DegenerateRegression(String),

    #[error("invalid regime: {0}")]
    InvalidRegime(String),

    #[error("undefined effective rank: operator norm of the matrix is zero")]
    UndefinedRank,

    #[error("empty shard persisted after {attempts} resampling attempts")]
    EmptyShard { attempts: usize },

    #[error("round {round} failed: {reason}")]
    RoundFailed { round: u64, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
