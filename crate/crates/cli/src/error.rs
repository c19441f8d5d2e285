use thiserror::Error;

/// Failures surfaced by the `utmost` binary, each mapped to an exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input: the message names the offending field.
    #[error("invalid field `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("solver aborted: {0}")]
    Solver(#[from] utmost_core::Error),

    #[error("sanity check failed: {failed} of {total} cells out of tolerance")]
    Sanity { failed: usize, total: usize },
}

impl CliError {
    pub fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation { .. } | CliError::Io { .. } => 1,
            CliError::Solver(_) => 2,
            CliError::Sanity { .. } => 3,
        }
    }

    /// Short machine-readable class used in the stderr line.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation { .. } => "validation",
            CliError::Io { .. } => "io",
            CliError::Solver(_) => "solver",
            CliError::Sanity { .. } => "sanity",
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
