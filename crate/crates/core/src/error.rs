use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("quantile grid mismatch: expected {expected} points, found {found}")]
    GridMismatch { expected: usize, found: usize },

    #[error("distributions live in different spaces (gaussian vs quantile1d)")]
    MixedSpaces,

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("{dim}x{dim} eigenproblem did not converge after {sweeps} Jacobi sweeps (off-diagonal norm {off_norm:e})")]
    EigenNoConvergence {
        dim: usize,
        sweeps: usize,
        off_norm: f64,
    },

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("invalid quantile function: {0}")]
    InvalidQuantile(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("empty distribution set")]
    EmptySet,

    #[error("barycenter fixed-point iteration stopped after {iterations} iterations with residual {residual:e}")]
    BarycenterNoConvergence { iterations: usize, residual: f64 },

    #[error("barycenter undefined: every positively weighted covariance is singular")]
    DegenerateBarycenter,

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("solution inconsistent with input set: {0}")]
    InconsistentSolution(String),

    #[error(
        "aggregated weight undefined: consensus center {center} has no untrimmed feature assigned"
    )]
    UndefinedWeight { center: usize },

    #[error("invalid bound parameters: {0}")]
    InvalidBound(String),

    #[error("invalid report: {0}")]
    InvalidReport(String),

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("cluster fit failed: {0}")]
    FitFailed(String),
}

impl Error {
    /// True for failures of an iterative numerical routine, as opposed to bad input.
    pub fn is_convergence_failure(&self) -> bool {
        matches!(
            self,
            Error::EigenNoConvergence { .. }
                | Error::BarycenterNoConvergence { .. }
                | Error::DegenerateBarycenter
                | Error::FitFailed(_)
        )
    }
}
