use thiserror::Error;

/// Errors produced by the estimation and testing layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("hypothesis matrix is not a contrast (max |H·1| = {max_row_sum:e})")]
    NotAContrast { max_row_sum: f64 },

    #[error("invalid design: {0}")]
    BadDesign(String),

    #[error("group {group}: {n} observations in dimension {d}, need at least {required}")]
    TooFewObservations {
        group: usize,
        n: usize,
        d: usize,
        required: usize,
    },

    #[error("group {group}: sample covariance matrix is not positive definite")]
    SingularCovariance { group: usize },

    #[error(
        "group {group}: sample mean vector is zero, the coefficient of variation is undefined"
    )]
    ZeroMean { group: usize },

    #[error("group {group}: estimated asymptotic variance {variance:e} is degenerate")]
    DegenerateVariance { group: usize, variance: f64 },

    #[error("degrees of freedom must be at least 1")]
    BadDegrees,

    #[error("pooled mean vector is zero, permutation test is undefined")]
    ZeroPooledMean,

    #[error("group sizes sum to {actual} but {expected} pooled observations were given")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("{failed} of {total} permutation replications failed (limit 1%)")]
    TooFewValidReplications { failed: usize, total: usize },

    #[error("exhaustive enumeration needs {count} partitions, limit is {limit}")]
    TooManyPartitions { count: f64, limit: usize },

    #[error("empty permutation distribution")]
    EmptyDistribution,

    #[error("argument outside domain: {0}")]
    DomainError(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{failed} of {total} Monte Carlo replications failed (limit 1%)")]
    TooManyFailedReplications { failed: usize, total: usize },
}

impl Error {
    /// Errors that come from the data rather than from how the caller set
    /// things up. The CLI maps these to exit code 2.
    pub fn is_estimation_error(&self) -> bool {
        matches!(
            self,
            Error::TooFewObservations { .. }
                | Error::SingularCovariance { .. }
                | Error::ZeroMean { .. }
                | Error::DegenerateVariance { .. }
                | Error::ZeroPooledMean
                | Error::TooFewValidReplications { .. }
                | Error::TooManyFailedReplications { .. }
                | Error::NonFinite { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
