use thiserror::Error;

/// Errors raised across the estimation and simulation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerically singular: {0}")]
    Singular(String),

    #[error("decomposition did not converge (relative residual {residual:.3e})")]
    NonConvergence { residual: f64 },

    #[error("ambiguous component pairing: {0}")]
    Ambiguous(String),

    #[error("search failed: {0}")]
    SearchFailed(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
