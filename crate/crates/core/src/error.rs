use std::path::PathBuf;

/// Errors surfaced by every layer of the synthesis pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("mode error: {0}")]
    Mode(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("wav error on {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
