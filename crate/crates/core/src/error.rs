use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the unlearning toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: malformed file: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible deletion spec: {0}")]
    InfeasibleSpec(String),

    #[error("non-finite value encountered: {0}")]
    Numeric(String),

    #[error("training failed: {0}")]
    TrainingFailure(String),

    #[error("Hessian solve did not converge: {0}")]
    SingularHessian(String),

    #[error("sensitivity bound invalid: {0}")]
    BoundInvalid(String),

    #[error("metric not supported for this model: {0}")]
    UnsupportedMetric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
