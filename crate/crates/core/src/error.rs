//! Error types shared across the simulation pipeline.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    /// Caller passed a value that violates an operation's preconditions.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Geometry sampling could not satisfy the minimum-separation constraint.
    #[error("infeasible geometry: {0}")]
    InfeasibleGeometry(String),

    /// An iterative propagator ran out of substeps before reaching tolerance.
    #[error("propagator convergence failure: {0}")]
    Convergence(String),

    /// A nonlinear fit failed to converge or produced an unphysical result.
    #[error("fit failure: {0}")]
    FitFailure(String),

    /// Too many ensemble realizations had to be resampled.
    #[error("ensemble failure: {0}")]
    Ensemble(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("serialization error: {0}")]
    Serialize(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
