use thiserror::Error;

/// Errors produced by the analytic, sampling and experiment layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid aspect ratio {0}: must be positive and finite")]
    InvalidAspectRatio(f64),
    #[error("invalid shift: {0}")]
    InvalidShift(String),
    #[error("non-finite integrand value at x = {0}")]
    NonFiniteIntegrand(f64),
    #[error("quadrature did not reach tolerance {tol:e} (estimated error {err:e})")]
    QuadratureFailed { tol: f64, err: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("eigendecomposition did not converge")]
    EigenNonConvergence,
    #[error("not enough replications: {0}")]
    TooFewReplications(usize),
    #[error("degenerate sample: {0}")]
    Degenerate(String),
    #[error("contour error: {0}")]
    Contour(String),
    #[error("resource exhausted: {0}")]
    ResourceExhausted(String),
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
