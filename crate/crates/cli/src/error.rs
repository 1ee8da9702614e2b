use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{}{}: {msg}", file.display(), frame.map(|f| format!(" (frame {f})")).unwrap_or_default())]
    Parse { file: PathBuf, frame: Option<usize>, msg: String },
    #[error("{}: {msg}", file.display())]
    Alignment { file: PathBuf, msg: String },
    #[error("incompatible checkpoint {}: {msg}", file.display())]
    IncompatibleCheckpoint { file: PathBuf, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] gait_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn parse(file: &Path, frame: Option<usize>, msg: impl ToString) -> Self {
        Self::Parse { file: file.to_path_buf(), frame, msg: msg.to_string() }
    }

    pub fn checkpoint(file: &Path, msg: impl ToString) -> Self {
        Self::IncompatibleCheckpoint { file: file.to_path_buf(), msg: msg.to_string() }
    }

    /// 0 success, 1 usage, 2 data, 3 training divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Core(gait_core::Error::TrainingDiverged { .. }) => 3,
            _ => 2,
        }
    }
}

pub(crate) trait IoContext<T> {
    fn at(self, path: &Path) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: &Path) -> Result<T> {
        self.map_err(|source| Error::Io { path: path.to_path_buf(), source })
    }
}
