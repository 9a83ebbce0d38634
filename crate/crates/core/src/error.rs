use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("signal too short: {len} samples, need at least {min}")]
    TooShort { len: usize, min: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("degenerate SNR: {0}")]
    DegenerateSnr(String),
    #[error("unreachable target: {0}")]
    Unreachable(String),
    #[error("token out of vocabulary: {0}")]
    OutOfVocabulary(String),
    #[error("not enough data: {0}")]
    NotEnoughData(String),
    #[error("model not trained: {0}")]
    Untrained(String),
    #[error("training diverged: {message}")]
    Diverged {
        message: String,
        last_good: Option<PathBuf>,
    },
    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),
    #[error("unsupported format: {0}")]
    Format(String),
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
