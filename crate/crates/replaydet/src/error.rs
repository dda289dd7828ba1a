//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt header in {path}: {detail}")]
    CorruptHeader { path: PathBuf, detail: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("precondition violated: {0}")]
    PreconditionViolation(String),

    #[error("clip too short: {got} samples, need at least {need}")]
    ClipTooShort { got: usize, need: usize },
    #[error("invalid mel band count {0}")]
    InvalidNumMel(usize),

    #[error("external codec failed: {0}")]
    ExternalCodecFailure(String),
    #[error("external vocoder failed: {0}")]
    ExternalVocoderFailure(String),
    #[error("corrupt package: {0}")]
    CorruptPackage(String),

    #[error("noise source is silent")]
    SilentNoiseSource,
    #[error("signal is silent, SNR undefined")]
    SilentSignal,
    #[error("impulse response longer than clip ({rir} > {clip} samples)")]
    RirTooLong { rir: usize, clip: usize },

    #[error("feature dimension mismatch: got {got}, expected {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("non-finite loss at epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },

    #[error("scores contain only one label class")]
    SingleClassInput,
    #[error("malformed line {line} in {path}: {detail}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("score ids missing from key file: {0:?}")]
    MissingKey(Vec<String>),

    #[error("bad model file: {0}")]
    BadModelFile(String),
    #[error("bad feature cache: {0}")]
    BadFeatureCache(String),
    #[error("config error: {0}")]
    Config(String),

    #[error("{failed} of {total} utterances failed feature extraction")]
    TooManyFailures { failed: usize, total: usize },
}
