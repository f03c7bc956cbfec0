use thiserror::Error;

/// Errors raised while building or solving stochastic obstacle problems.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite {what} at x = ({}, {})", .x[0], .x[1])]
    NonFinite { what: &'static str, x: [f64; 2] },

    #[error("gradient of {0} is required but was not supplied")]
    MissingGradient(&'static str),

    #[error("density is not normalized: integral = {integral}")]
    DensityNotNormalized { integral: f64 },

    #[error("coefficient is not uniformly positive: minimum {min} <= 0")]
    Coercivity { min: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("Monte Carlo run skipped {skipped} of {total} samples")]
    TooManySkipped { skipped: usize, total: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
