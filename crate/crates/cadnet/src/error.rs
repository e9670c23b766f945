use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Core(#[from] cadnet_core::Error),
}

pub type IoResult<T> = Result<T, IoError>;

pub(crate) fn open(path: &std::path::Path) -> IoResult<std::fs::File> {
    std::fs::File::open(path).map_err(|source| IoError::File { path: path.to_owned(), source })
}

pub(crate) fn create(path: &std::path::Path) -> IoResult<std::fs::File> {
    std::fs::File::create(path).map_err(|source| IoError::File { path: path.to_owned(), source })
}
