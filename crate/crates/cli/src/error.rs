use raceline_core::Error;
use thiserror::Error;

/// Process exit statuses.
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_SOLVER: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Data(String),

    #[error("{0}")]
    Solver(String),

    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Solver(_) => EXIT_SOLVER,
            CliError::Core(e) => match e {
                Error::InvalidInput(_) => EXIT_USAGE,
                Error::QpNotConverged { .. }
                | Error::UnreachableSegment { .. }
                | Error::NotConverged { .. }
                | Error::SolverNan { .. }
                | Error::Diverged { .. } => EXIT_SOLVER,
                _ => EXIT_DATA,
            },
        }
    }
}
