use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("zero-norm field: {0}")]
    ZeroNorm(&'static str),
    #[error("linear solver stalled at time step {step}: relative residual {residual:e} after {iterations} iterations")]
    LinearSolver {
        step: usize,
        residual: f64,
        iterations: usize,
    },
    #[error("step size undefined: zero denominator (stationary point)")]
    StationaryPoint,
    #[error("{path}:{line}: {msg}")]
    Csv {
        path: String,
        line: usize,
        msg: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
