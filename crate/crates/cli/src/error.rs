use std::path::PathBuf;

use thiserror::Error;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_VALIDATION: u8 = 4;
pub const EXIT_FAILURE: u8 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] qevo::Error),
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for this failure.
    pub fn exit_code(&self) -> u8 {
        use qevo::Error as E;
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io { .. } => EXIT_IO,
            CliError::Core(e) => match e {
                E::Config(_) => EXIT_CONFIG,
                E::Io { .. } => EXIT_IO,
                E::Evaluation { .. } | E::NonFiniteMetric(_) => EXIT_FAILURE,
                _ => EXIT_VALIDATION,
            },
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
