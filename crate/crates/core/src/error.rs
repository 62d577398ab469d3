use thiserror::Error;

/// Errors raised by the potentials, integrators, solvers and bound checks.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point {point:?} is outside the domain of the potential")]
    Domain { point: Vec<f64> },

    #[error("trajectory left the domain of the potential at t = {t}")]
    DomainEscape { t: f64 },

    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("operation not supported for potential kind {0}")]
    UnsupportedKind(String),

    #[error("closed form only available for equal endpoints")]
    UnsupportedEndpoints,

    #[error("shooting did not converge (best boundary residual {residual:e})")]
    NoConvergence { residual: f64 },

    #[error("action minimization stopped after {iterations} iterations (gradient {gradient:e})")]
    MaxIterations { iterations: usize, gradient: f64 },

    #[error("time grid is not uniform")]
    NonUniformGrid,

    #[error("time {0} is not a grid node")]
    OffGrid(f64),

    #[error("time {t} outside [0, {horizon}]")]
    OutOfRange { t: f64, horizon: f64 },

    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(String),

    #[error("series contains a non-positive value at index {0}")]
    DegenerateSeries(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
