//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by kernel evaluation, interpolation, stepping, and the
/// benchmark/diagnostic front ends.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("derivative order {order} unsupported (analytic formulas stop at 3)")]
    DerivativeOrder { order: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("at least {needed} sites required, got {got}")]
    TooFewSites { needed: usize, got: usize },

    #[error("duplicate sites at indices {first} and {second}: {coords:?}")]
    DuplicateSites {
        first: usize,
        second: usize,
        coords: Vec<f64>,
    },

    #[error("site set is not unisolvent for a polynomial tail of dimension {tail_dim}")]
    NotUnisolvent { tail_dim: usize },

    #[error("interpolation system is numerically singular or ill-conditioned (condition estimate {estimate:.3e})")]
    IllConditioned { estimate: f64 },

    #[error("interpolation system is singular")]
    Singular,

    #[error("negative native-space quadratic form {value:.3e}: moment condition violated")]
    BrokenMomentCondition { value: f64 },

    #[error("fixed-point iteration did not converge at step {step} within {max_iter} iterations (residual {residual:.3e})")]
    FixedPointDiverged {
        step: usize,
        max_iter: usize,
        residual: f64,
    },

    #[error("nonlinearity returned a non-finite value at site {site}")]
    NonFiniteNonlinearity { site: usize },

    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("solver failed at step {step}: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed data row at line {line}: {message}")]
    MalformedRow { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
