use thiserror::Error;

/// Errors raised by the estimators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("alpha = {0} is outside the operator-convex range [-1, 2]")]
    UnsupportedAlpha(f64),

    #[error("argument {0} is outside the domain t > 0")]
    Domain(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("dataset has no samples")]
    EmptyDataset,

    #[error("category {value} is not an integer in 1..={cardinality}")]
    InvalidCategory { value: f64, cardinality: usize },

    #[error("reference second moment is not positive definite; set lambda_reg > 0")]
    SingularReference,

    #[error("moment matrices are not positive semidefinite (generalized eigenvalue {0})")]
    NotPsd(f64),

    #[error("debiasing needs at least two samples from each distribution")]
    TooFewSamples,

    #[error("product feature space {m1} x {m2} exceeds the direct-path guard of {limit}; reduce the maps first")]
    DimensionGuard { m1: usize, m2: usize, limit: usize },

    #[error("tangent system is not negative semidefinite even after damping")]
    IndefiniteTangent,

    #[error("objective became non-finite")]
    DivergedObjective,

    #[error("line search failed to improve the objective")]
    LineSearchFailure,

    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;
