use std::fmt;

/// Process-level error classes; the exit code depends on the class
/// (1 for configuration problems, 2 for solver failures).
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Solver(String),
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Solver(_) => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Solver(m) => write!(f, "solver failure: {m}"),
            CliError::Other(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<invsource::Error> for CliError {
    fn from(e: invsource::Error) -> Self {
        match e {
            invsource::Error::LinearSolver { .. } => CliError::Solver(e.to_string()),
            invsource::Error::InvalidArgument(_)
            | invsource::Error::InvalidGrid(_)
            | invsource::Error::ShapeMismatch(_) => CliError::Config(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(format!("i/o error: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;
