//! Crate-wide error type.
//!
//! Variants are grouped by how the CLI maps them to exit codes: data errors
//! (malformed input, invalid instances) exit with 2, algorithm precondition
//! and convergence failures exit with 3.

use thiserror::Error;

use crate::design::Design;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Arm index outside `0..arms`.
    #[error("arm index {index} out of range for {arms} arms")]
    ArmIndex { index: usize, arms: usize },

    /// Matrix shapes that cannot be combined.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Structurally invalid input data (non-finite entries, empty matrices, ...).
    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    /// Instance admits no meaningful gap-based analysis (a gap is zero or not finite).
    #[error("degenerate instance: {0}")]
    Degenerate(String),

    /// Feature set spans nothing (all rows zero).
    #[error("feature matrix has rank zero")]
    RankZero,

    /// Mirror descent hit its iteration cap before certifying optimality.
    /// Carries the best design seen so the caller can accept or abort.
    #[error(
        "optimal design did not converge: criterion {value:.6} vs target {target:.6} \
         after {iterations} iterations (tolerance {tolerance:.1e})"
    )]
    DesignNotConverged {
        value: f64,
        target: f64,
        iterations: usize,
        tolerance: f64,
        best: Design,
    },

    /// Budget below the threshold required by the rounding guarantee.
    #[error("budget {given} below minimum {minimum} (= ceil(5 h_S / kappa^2) with h_S = {h_s})")]
    BudgetTooSmall {
        given: usize,
        minimum: usize,
        h_s: usize,
    },

    /// Invalid rounding slack parameter.
    #[error("kappa must lie in (0, 1/3], got {0}")]
    InvalidKappa(f64),

    /// Fixed-budget total too small for the per-round rounding guarantee.
    #[error(
        "budget {given} too small for {rounds} rounds over a rank-{h_r} arm set; \
         minimum admissible budget is {minimum}"
    )]
    FixedBudgetTooSmall {
        given: usize,
        minimum: usize,
        rounds: usize,
        h_r: usize,
    },

    /// Rounding repair could not certify the allocation bound (internal).
    #[error("integer rounding failed to certify: value {value:.6} exceeds bound {bound:.6}")]
    RoundingBound { value: f64, bound: f64 },

    /// Least squares attempted along a direction with no samples.
    #[error("subspace direction unsampled: information matrix singular on the span")]
    UnsampledDirection,

    /// Synthetic instance generation exhausted its rejection budget.
    #[error("padding arm rejection sampling exhausted after {attempts} attempts (seed {seed})")]
    PaddingExhausted { attempts: usize, seed: u64 },

    /// Fixed-confidence run exceeded the round cap (diagnostic guard).
    #[error("fixed-confidence run exceeded {0} rounds without stopping")]
    RoundCapExceeded(usize),

    /// Malformed input file.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Invalid experiment configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code class: 2 for data problems, 3 for algorithm
    /// preconditions and convergence failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ArmIndex { .. }
            | Error::DimensionMismatch(_)
            | Error::InvalidInstance(_)
            | Error::Parse { .. }
            | Error::Config(_)
            | Error::Io(_)
            | Error::Json(_) => 2,
            Error::Degenerate(_)
            | Error::RankZero
            | Error::DesignNotConverged { .. }
            | Error::BudgetTooSmall { .. }
            | Error::InvalidKappa(_)
            | Error::FixedBudgetTooSmall { .. }
            | Error::RoundingBound { .. }
            | Error::UnsampledDirection
            | Error::PaddingExhausted { .. }
            | Error::RoundCapExceeded(_) => 3,
        }
    }
}
