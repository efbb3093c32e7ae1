use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    /// Process exit status: 1 configuration, 2 data or I/O, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) | CliError::Io { .. } => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl From<lmebn::Error> for CliError {
    fn from(e: lmebn::Error) -> Self {
        if e.is_config() {
            match e {
                lmebn::Error::Config(v) => CliError::Config(v),
                other => CliError::Config(vec![other.to_string()]),
            }
        } else if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}
