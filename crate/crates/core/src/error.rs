use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("unsupported size: {0}")]
    UnsupportedSize(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("fixed-point inversion did not converge after {iterations} iterations (residual {residual:.3e}); {hint}")]
    InversionFailed {
        iterations: usize,
        residual: f64,
        hint: String,
    },

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("worker failure: {0}")]
    Worker(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for failures of the numerics (divergence, failed inversion)
    /// as opposed to bad input or configuration.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::InversionFailed { .. } | Error::Divergence { .. })
    }
}
