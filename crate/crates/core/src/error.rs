//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum EvoError {
    /// An argument violated a precondition (empty input, length mismatch, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A value fell outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Too few samples for a statistical fit.
    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    /// All samples identical (or otherwise unfittable).
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// The requested exploitation range exceeds the fitted tail mass.
    #[error("exploitation range too large: nu*n/n_peaks = {ratio} >= 1")]
    ExploitationRangeTooLarge { ratio: f64 },

    /// The linearized constrained step problem has no feasible point inside
    /// the trust region; the caller should take a recovery step instead.
    #[error("infeasible step problem: recovery step needed (c = {c}, c^2/v = {c_sq_over_v}, delta = {delta})")]
    RecoveryNeeded { c: f64, c_sq_over_v: f64, delta: f64 },

    /// Constraint violated but its gradient vanished: no recovery direction.
    #[error("cannot recover: constraint gradient vanished while constraint is violated")]
    CannotRecover,

    /// A numeric computation produced a non-finite intermediate.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// API misuse (e.g. stepping an environment after the episode ended).
    #[error("usage error: {0}")]
    Usage(String),

    /// Configuration file problem.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvoError>;
