use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("field `{field}`: {message}")]
    Parse { field: String, message: String },
    #[error("{0}")]
    Data(String),
    #[error("model file field `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error(transparent)]
    Numeric(#[from] regimix::Error),
}

impl CliError {
    /// Stable machine-readable class used as the process error prefix.
    pub fn class(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "io",
            CliError::Parse { .. } => "parse",
            CliError::Data(_) => "data",
            CliError::Schema { .. } => "schema",
            CliError::Numeric(_) => "numeric",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 3,
            CliError::Parse { .. } | CliError::Schema { .. } => 4,
            CliError::Data(_) => 5,
            CliError::Numeric(_) => 6,
        }
    }

    pub(crate) fn parse(field: &str, message: impl Into<String>) -> Self {
        CliError::Parse {
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn schema(field: &str, message: impl Into<String>) -> Self {
        CliError::Schema {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub(crate) fn read_text(path: &std::path::Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_text(path: &std::path::Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}
