use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A draws file that cannot be read back.
    #[error("{}: record {record}: {message}", path.display())]
    Format { path: PathBuf, record: usize, message: String },

    #[error(transparent)]
    Model(#[from] npglm::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, record: usize, message: impl Into<String>) -> Self {
        CliError::Format { path: path.to_path_buf(), record, message: message.into() }
    }

    /// 2 for bad invocations or inputs, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Format { .. } => 2,
            CliError::Io { .. } => 1,
            CliError::Model(e) => match e {
                npglm::Error::ChainAborted { .. } | npglm::Error::NotPositiveDefinite { .. } => 1,
                _ => 2,
            },
        }
    }
}

pub fn csv_error(path: &Path, err: csv::Error) -> CliError {
    match err.kind() {
        csv::ErrorKind::Io(_) => match err.into_kind() {
            csv::ErrorKind::Io(e) => CliError::io(path, e),
            _ => unreachable!(),
        },
        _ => {
            let row = err.position().map(|p| p.record() as usize);
            CliError::Model(npglm::Error::Schema { row, message: err.to_string() })
        }
    }
}
