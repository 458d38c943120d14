use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("coefficient must be positive, found {value} at node {node}")]
    NonPositiveCoefficient { node: usize, value: f64 },

    #[error("factorization failed at pivot {pivot} (value {value:e})")]
    Factorization { pivot: usize, value: f64 },

    #[error("covariance matrix is not positive semidefinite: min eigenvalue {min:e}, max {max:e}")]
    NotPsd { min: f64, max: f64 },

    #[error("degenerate random field: sample is constant (spread {spread:e})")]
    DegenerateField { spread: f64 },

    #[error("eigensolver did not reach tolerance: worst residual {residual:e} at pair {index}")]
    EigenResidual { index: usize, residual: f64 },

    #[error("singular coarse system even after regularization ({0})")]
    SingularCoarse(String),

    #[error("zero vector where a nonzero one is required: {0}")]
    ZeroVector(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("subspace self-check failed: {0}")]
    SelfCheck(String),
}
