use thiserror::Error;

/// Errors raised by the solvers and diagnostics.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("invalid initial profile: {0}")]
    InvalidProfile(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("boundary condition mismatch: potential is {found}, model expects {expected}")]
    BoundaryMismatch { expected: String, found: String },

    #[error("negative density {value:e} in cell {cell} (tolerance {tolerance:e})")]
    Positivity { cell: usize, value: f64, tolerance: f64 },

    #[error("cumulative mass lost monotonicity at node {node}: drop {drop:e}")]
    Monotonicity { node: usize, drop: f64 },

    #[error("no blowup trend: {0}")]
    NoBlowupTrend(String),

    #[error("invalid estimate: {0}")]
    InvalidEstimate(String),

    #[error("geometry: {0}")]
    Geometry(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
