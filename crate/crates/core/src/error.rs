use thiserror::Error;

/// Errors raised by fitting, resampling, interval construction and the harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    InvalidData(String),

    /// The cross-product matrix failed the relative pivot test.
    #[error("design matrix is numerically singular")]
    SingularDesign,

    #[error("observation {index} has leverage numerically equal to one")]
    LeverageOne { index: usize },

    #[error("empirical quantile or ECDF requested from an empty sample")]
    EmptySample,

    #[error("probability {0} is outside the open unit interval")]
    InvalidProbability(f64),

    #[error("coefficient index {index} out of range for {k} fitted columns")]
    CoefficientOutOfRange { index: usize, k: usize },

    #[error("resample slot {slot} stayed degenerate after {redraws} redraws")]
    TooManyDegenerateResamples { slot: usize, redraws: usize },

    #[error("population slope is not finite for this mean function and covariate law")]
    NonFiniteEstimand,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
