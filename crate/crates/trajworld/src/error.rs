//! Crate-wide error type and exit-code mapping.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("frame index {index} out of range 1..={len}")]
    FrameIndex { index: usize, len: usize },
    #[error("target time {t} outside key span [{lo}, {hi}]")]
    Extrapolation { t: f64, lo: f64, hi: f64 },
    #[error("unknown text label {0}")]
    UnknownLabel(usize),
    #[error("training diverged at step {step}: {reason}")]
    Training { step: usize, reason: String },
    #[error("metric undefined: {0}")]
    MetricUndefined(String),
    #[error("scene generation failed: {0}")]
    Generation(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 0 success, 2 config/input error, 3 training
    /// divergence, 4 metric undefined.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Training { .. } => 3,
            Error::MetricUndefined(_) => 4,
            _ => 2,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
