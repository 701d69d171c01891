use thiserror::Error;

/// Errors produced by the pooling and normalization operators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PnError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("eigensolver did not converge after {iterations} iterations ({detail})")]
    NoConvergence { iterations: usize, detail: String },

    #[error("spectral gap {found:.3e} below required {required:.3e} after {attempts} attempt(s)")]
    SpectralGap {
        found: f64,
        required: f64,
        attempts: usize,
    },

    #[error("input is not trace-normalized: trace = {0}")]
    TraceNotNormalized(f64),

    #[error("iteration diverged: {0}")]
    Divergence(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for PnError {
    fn from(err: std::io::Error) -> Self {
        PnError::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, PnError>;
