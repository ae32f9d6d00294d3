use std::path::PathBuf;

use thiserror::Error;

use crate::ndgrad::GradError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("embeddings line {line}: {detail}")]
    Embeddings { line: usize, detail: String },
    #[error("{path}: missing column {column}")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path} row {row}: {detail}")]
    BadRow {
        path: PathBuf,
        row: usize,
        detail: String,
    },
    #[error("{path} line {line}: {detail}")]
    BadRecord {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("model file: {0}")]
    ModelFile(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
