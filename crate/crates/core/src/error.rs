use thiserror::Error;

/// Errors raised anywhere in the simulation and reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("optimization failure: {0}")]
    OptimizationFailure(String),

    #[error("discriminator calibration failed: {0}")]
    CalibrationFailure(String),

    #[error("operator not compatible with the observable: {0}")]
    NotCompatible(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Schema(_) | Error::InvalidArgument(_) | Error::Json(_) => 2,
            Error::Io(_) => 2,
            Error::NumericalFailure(_)
            | Error::OptimizationFailure(_)
            | Error::CalibrationFailure(_)
            | Error::NotCompatible(_) => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
