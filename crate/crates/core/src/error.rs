use thiserror::Error;

/// Errors produced by matrix utilities, fusion rules and the verification
/// machinery.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("matrix is asymmetric beyond tolerance (max |a_ij - a_ji| = {0:.3e})")]
    Asymmetric(f64),

    #[error("matrix is not positive semi-definite (min eigenvalue {0:.3e})")]
    NotPsd(f64),

    #[error("matrix is singular or too ill-conditioned to invert ({0})")]
    SingularMatrix(String),

    #[error("invalid simplex weights: {0}")]
    InvalidWeights(String),

    #[error("all effective fusion weights are zero")]
    DegenerateWeights,

    #[error("weight vector lies on the simplex boundary (omega[{0}] = 0)")]
    BoundaryWeight(usize),

    #[error("correlation matrix has spectral norm {0} > 1")]
    InvalidCorrelation(f64),

    #[error("witness construction failed: {0}")]
    WitnessFailed(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
