//! Error type shared across the solver crates.

use thiserror::Error;

/// Errors produced by grid operations, solvers, and persistence.
#[derive(Debug, Error)]
pub enum Error {
    /// Two grid objects were combined but live on different grids.
    #[error("mismatched grids: {0} cells vs {1} cells")]
    MismatchedGrids(usize, usize),

    /// An operation required equal total masses.
    #[error("total masses differ: {0} vs {1}")]
    MassMismatch(f64, f64),

    /// Empirical states with different population normalizers.
    #[error("empirical states have different N: {0} vs {1}")]
    NormalizerMismatch(usize, usize),

    /// A problem size exceeded a hard capacity bound.
    #[error("capacity exceeded: {what} = {got}, limit {limit}")]
    Capacity {
        what: &'static str,
        got: usize,
        limit: usize,
    },

    /// The model lacks structure required by the operation.
    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    /// A parameter was outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The explicit part of a scheme would be unstable at the requested step.
    #[error("CFL violation: dt = {dt:.3e} exceeds {limit:.3e}; use at least {suggested_steps} steps")]
    CflViolation {
        dt: f64,
        limit: f64,
        suggested_steps: usize,
    },

    /// A solver produced a non-finite value.
    #[error("numerical breakdown in {context} at time index {time_index}")]
    NumericalBreakdown {
        context: &'static str,
        time_index: usize,
    },

    /// A measure path and its jump measure disagree on mass bookkeeping.
    #[error("mass inconsistency between path and jump measure: {0:.3e}")]
    MassInconsistency(f64),

    /// An out-of-range query against a solved object.
    #[error("query out of range: {0}")]
    OutOfRange(String),

    /// Linear program could not be solved.
    #[error("linear program failed: {0}")]
    Lp(String),

    /// Text artifact could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
