use std::path::{Path, PathBuf};

use thiserror::Error;

/// Errors surfaced by the file formats and the CLI, each mapped to an exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{path}: {source}")]
    InFile { path: PathBuf, source: Box<CliError> },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{0}")]
    Input(String),

    #[error(transparent)]
    Core(#[from] fdia_core::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn in_file(self, path: &Path) -> Self {
        CliError::InFile {
            path: path.to_path_buf(),
            source: Box::new(self),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 0 success, 1 internal error, 2 input error, 3 infeasible or limit reached.
    pub fn exit_code(&self) -> i32 {
        use fdia_core::Error as E;
        match self {
            CliError::InFile { source, .. } => source.exit_code(),
            CliError::Core(E::Infeasible | E::NotFound(_) | E::LimitReached) => 3,
            CliError::Core(E::Lp(_) | E::SingularNormalEquations) | CliError::Internal(_) => 1,
            _ => 2,
        }
    }
}
