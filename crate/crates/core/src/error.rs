use thiserror::Error;

/// Errors produced by the lab.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("environment mismatch: {0}")]
    EnvironmentMismatch(String),

    /// Non-finite values showed up in ratios, gradients or parameters.
    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("config error in `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl LabError {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        LabError::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        LabError::InvalidArgument(message.into())
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
