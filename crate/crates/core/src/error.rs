use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("innovation covariance is not positive definite on {date}")]
    FilterDegenerate { date: String },

    #[error("calibration failed: every start failed ({})", .diagnostics.join("; "))]
    CalibrationFailed { diagnostics: Vec<String> },

    #[error("mean market yield is zero, APE is undefined")]
    ApeUndefined,

    #[error("{path}: row {row}, column {column}: {message}")]
    Parse {
        path: String,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::FilterDegenerate { .. } | Error::CalibrationFailed { .. } | Error::ApeUndefined
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
