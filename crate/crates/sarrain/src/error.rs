use std::path::{Path, PathBuf};

/// Failures of file-level operations. Every variant that concerns a file
/// carries its path.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: not an SGRID file: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path}: corrupt file: {msg}")]
    Corruption { path: PathBuf, msg: String },
    #[error("{path}: unsupported version: {msg}")]
    UnsupportedVersion { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Core { path: PathBuf, source: sarrain_core::Error },
    #[error(transparent)]
    Algorithm(#[from] sarrain_core::Error),
    /// Invalid command-line usage detected after argument parsing.
    #[error("{0}")]
    Usage(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub fn at(path: &Path, source: sarrain_core::Error) -> Self {
        Error::Core { path: path.to_path_buf(), source }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::Corruption { .. } => "corruption",
            Error::UnsupportedVersion { .. } => "unsupported_version",
            Error::Csv { .. } => "csv",
            Error::Json { .. } => "json",
            Error::Core { .. } | Error::Algorithm(_) => "data",
            Error::Usage(_) => "usage",
        }
    }

    pub fn path(&self) -> Option<&Path> {
        match self {
            Error::Io { path, .. }
            | Error::Format { path, .. }
            | Error::Corruption { path, .. }
            | Error::UnsupportedVersion { path, .. }
            | Error::Csv { path, .. }
            | Error::Json { path, .. }
            | Error::Core { path, .. } => Some(path),
            Error::Algorithm(_) | Error::Usage(_) => None,
        }
    }
}

/// Attaches a path to core errors.
pub trait WithPath<T> {
    fn at(self, path: &Path) -> Result<T>;
}

impl<T> WithPath<T> for Result<T, sarrain_core::Error> {
    fn at(self, path: &Path) -> Result<T> {
        self.map_err(|e| Error::at(path, e))
    }
}
