use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("weight matrix U is not symmetric positive-definite")]
    WeightNotSpd,

    #[error("R0 is singular (reciprocal condition {rcond:.3e}); initial condition is not observable")]
    SingularR0 { rcond: f64 },

    #[error("invalid observations: {0}")]
    InvalidObservations(String),

    #[error("observation time {time} lies outside [0, {horizon}]")]
    ObservationOutsideHorizon { time: f64, horizon: f64 },

    #[error("malformed data at {path}:{line}: {reason}")]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("missing constants: {0}")]
    MissingConstants(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("trajectory diverged at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("non-finite state during integration at t = {time}")]
    NonFiniteState { time: f64 },

    #[error("instance too large for the brute-force oracle ({size} > {limit} unknowns)")]
    TooLarge { size: usize, limit: usize },

    #[error("estimation failed: {0}")]
    EstimationFailed(String),

    #[error("too many failed replicates: {failures} of {total}")]
    TooManyFailures { failures: usize, total: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures caused by user input rather than numerics.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Malformed { .. }
                | Error::InvalidObservations(_)
                | Error::ObservationOutsideHorizon { .. }
                | Error::MissingConstants(_)
                | Error::Config(_)
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
                | Error::Dimension(_)
                | Error::InvalidModel(_)
        )
    }
}
