use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: expected {expected} grid values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error(
        "newton solve did not converge after {iterations} iterations (residual {residual:.3e})"
    )]
    NewtonDivergence { iterations: usize, residual: f64 },

    #[error("step {step}: {source}")]
    StepFailure {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("picard iteration did not converge after {iterations} iterations (last residual {last:.3e})")]
    PicardNonConvergence {
        iterations: usize,
        last: f64,
        residuals: Vec<f64>,
    },

    #[error("non-finite statistic on path with seed {seed}, path {path}")]
    NonFinite { seed: u64, path: u64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
