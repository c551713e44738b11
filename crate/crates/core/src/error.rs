use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileMissing(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("header mismatch: missing column `{0}`")]
    HeaderMismatch(String),

    #[error("unknown raw label `{raw}` on source row {row}")]
    UnknownLabel { raw: String, row: usize },

    #[error("dataset has a single class ({0}); both classes are required")]
    SingleClass(u8),

    #[error("class {class} has {count} member(s); at least 2 are required to split")]
    ClassTooSmall { class: u8, count: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("missing row_id {0}")]
    MissingRow(usize),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
