use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad parameters or configuration; nothing was run.
    #[error("{0}")]
    Validation(String),

    /// Failure while reading data or producing results.
    #[error("{0}")]
    Runtime(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Config { path: PathBuf, reason: String },

    #[error(transparent)]
    Core(#[from] notif_ltv_core::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 for validation problems, 2 for runtime and data problems.
    pub fn exit_code(&self) -> u8 {
        use notif_ltv_core::Error as E;
        match self {
            CliError::Validation(_) | CliError::Config { .. } => 1,
            CliError::Core(
                E::InvalidParameter { .. }
                | E::UnknownUserType(_)
                | E::BoundsMismatch { .. }
                | E::DuplicateTreatment(_)
                | E::NoBaseline,
            ) => 1,
            CliError::Runtime(_) | CliError::Io { .. } | CliError::Core(_) => 2,
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
