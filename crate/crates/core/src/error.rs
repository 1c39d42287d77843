use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the protoaudio library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("clip length: expected {expected} samples, got {actual}")]
    ClipLength { expected: usize, actual: usize },

    #[error("sample rate mismatch: expected {expected} Hz, got {actual} Hz")]
    SampleRate { expected: u32, actual: u32 },

    #[error("spectrogram is already standardized")]
    AlreadyStandardized,

    #[error("spectrogram is not standardized")]
    NotStandardized,

    #[error("unstandardize first: griffin-lim needs raw log-mel values")]
    UnstandardizeFirst,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("input of {got:?} is smaller than the receptive field {need:?}")]
    TooSmall { got: (usize, usize), need: (usize, usize) },

    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("unsupported format version {0}")]
    BadVersion(u32),

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),

    #[error("invalid utf-8 in record id")]
    BadId,

    #[error("prototype ({class}, {index}) has zero norm")]
    ZeroPrototype { class: usize, index: usize },

    #[error("undefined AUROC: no class has both positive and negative labels")]
    UndefinedAuroc,

    #[error("class mask selects zero classes")]
    EmptyMask,

    #[error("non-finite loss at step {step}; offending batch ids: {ids:?}")]
    NonFiniteLoss { step: usize, ids: Vec<String> },

    #[error("stride metadata missing from embedding map")]
    MissingStride,

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("png: {0}")]
    Png(#[from] png::EncodingError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
