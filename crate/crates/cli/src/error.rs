use std::path::Path;

use thiserror::Error;

/// Errors of the command-line front end, each tied to an exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    /// Malformed input; every problem found is listed.
    #[error("parse error:\n  {}", .0.join("\n  "))]
    Parse(Vec<String>),
    /// Well-formed input that violates the data rules; every problem found is listed.
    #[error("validation failed:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error(transparent)]
    Model(#[from] popmaxent::Error),
    #[error("{0}")]
    Other(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_NON_CONVERGENCE: i32 = 4;
pub const EXIT_DECLARED_FAILURE: i32 = 5;

impl CliError {
    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.display().to_string(), msg: err.to_string() }
    }

    pub fn exit_code(&self) -> i32 {
        use popmaxent::Error as E;
        match self {
            CliError::Parse(_) => EXIT_PARSE,
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Model(E::InvalidInput(_) | E::Domain(_) | E::Infeasible(_) | E::Empty(_)) => EXIT_VALIDATION,
            CliError::Model(E::NonConvergence(_) | E::Quadrature(_)) => EXIT_NON_CONVERGENCE,
            CliError::Model(E::BlowUp(_)) | CliError::Io { .. } | CliError::Other(_) => EXIT_OTHER,
        }
    }
}
