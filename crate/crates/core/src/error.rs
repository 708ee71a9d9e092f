use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("MIDI parse error at byte {offset}: {message}")]
    MidiParse { offset: usize, message: String },

    #[error("unsupported MIDI format: {0}")]
    UnsupportedFormat(String),

    #[error("invalid song: {0}")]
    InvalidSong(String),

    #[error("no key: {0}")]
    NoKey(String),

    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),

    #[error("invalid piano roll: {0}")]
    InvalidRoll(String),

    #[error("numeric failure in {layer}: {detail}")]
    NumericFailure { layer: String, detail: String },

    #[error("checkpoint integrity error: {0}")]
    Integrity(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("missing fragment id {0}")]
    MissingId(usize),

    #[error("dataset format error: {0}")]
    Dataset(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the failure is attributable to the caller's input (as opposed to
    /// an internal or environmental fault).
    pub fn is_invalid_input(&self) -> bool {
        !matches!(
            self,
            Error::NumericFailure { .. } | Error::Io { .. } | Error::Json(_)
        )
    }
}
