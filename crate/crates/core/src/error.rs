//! Error type shared across the library.

use thiserror::Error;

/// Errors produced by parsing, validation, solving, and simulation.
#[derive(Debug, Error)]
pub enum Error {
    /// A rate or depth string could not be parsed as an exact rational.
    #[error("invalid rational {input:?}: {reason}")]
    InvalidRational { input: String, reason: String },

    /// Bucket parameters violate the feasibility constraints.
    #[error("invalid bucket: {0}")]
    InvalidBucket(String),

    /// A token count outside the reachable range, or a send without tokens.
    #[error("invalid token state: {0}")]
    InvalidTokenState(String),

    /// A probability vector failed validation.
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    /// A dataset row could not be parsed or failed validation.
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },

    /// Two dataset rows share an id.
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { id: String, line: usize },

    /// An operation that needs samples received none.
    #[error("empty dataset")]
    EmptyDataset,

    /// An operation that needs fitted metrics found unpopulated samples.
    #[error("sample {id:?} has no metric; fit a metric map first")]
    MetricMissing { id: String },

    /// A sample's label has zero probability at every temperature.
    #[error("sample {id:?}: label probability is zero, NLL is infinite at every temperature")]
    CalibrationInfeasible { id: String },

    /// Value iteration hit the sweep cap before meeting the tolerance.
    #[error("value iteration did not converge after {sweeps} sweeps (residual {residual:.3e})")]
    NonConvergence { sweeps: u64, residual: f64 },

    /// The scaled state space is too large to solve or simulate.
    #[error("bucket state space has {states} states, exceeding the cap of {cap}")]
    StateSpaceTooLarge { states: u64, cap: u64 },

    /// A configuration value violates a precondition.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
