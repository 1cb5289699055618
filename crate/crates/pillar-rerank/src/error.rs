use std::io;
use std::path::{Path, PathBuf};

use pillar_rerank_core::train::TrainError;

use crate::matrix_file::FormatError;
use crate::settings::ConfigError;
use crate::textio::ParseError;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const IO: i32 = 3;
    pub const NUMERIC: i32 = 4;
    pub const INPUT: i32 = 5;
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Format { path: PathBuf, source: FormatError },
    #[error("{}: {source}", path.display())]
    Parse { path: PathBuf, source: ParseError },
    #[error("{}: {message}", path.display())]
    Manifest { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] pillar_rerank_core::Error),
    #[error("{0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn manifest(path: &Path, message: impl Into<String>) -> Self {
        Error::Manifest {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        use pillar_rerank_core::Error as Core;
        match self {
            Error::Config(_) | Error::Usage(_) => exit::CONFIG,
            Error::Io { .. } | Error::Format { .. } | Error::Parse { .. } | Error::Manifest { .. } => {
                exit::IO
            }
            Error::Numeric(_) => exit::NUMERIC,
            Error::Core(e) => match e {
                Core::Config(_) => exit::CONFIG,
                Core::NonFiniteGradient { .. } | Core::DegenerateEmbedding { .. } => exit::NUMERIC,
                Core::RejectedInput(_) | Core::OutOfRange(_) | Core::Shape(_) | Core::Capability(_) => {
                    exit::INPUT
                }
            },
        }
    }
}

impl From<TrainError> for Error {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Core(e) => Error::Core(e),
            d @ TrainError::Diverged { .. } => Error::Numeric(d.to_string()),
        }
    }
}

/// Reads a whole file, attaching the path to failures.
pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}
