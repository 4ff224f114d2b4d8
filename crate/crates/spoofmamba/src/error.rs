//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value produced by op `{op}`")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar loss, got {numel} elements")]
    NonScalarLoss { numel: usize },

    #[error("graph already consumed by a backward pass")]
    GraphConsumed,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("embedding has zero norm; angular loss undefined")]
    ZeroNormEmbedding,

    #[error("NaN gradient in parameter `{name}` at step {step}")]
    NanGradient { name: String, step: u64 },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("score set needs both classes: {bonafide} bonafide, {spoof} spoof")]
    SingleClass { bonafide: usize, spoof: usize },

    #[error("t-DCF requires ASV operating-point rates (asv_p_miss, asv_p_fa, asv_p_fa_spoof)")]
    MissingAsvRates,

    #[error("{path}: sample rate mismatch: expected {expected} Hz, got {got} Hz")]
    SampleRateMismatch { path: String, expected: u32, got: u32 },

    #[error("{path}: channel mismatch: expected mono, got {got} channels")]
    ChannelMismatch { path: String, got: u16 },

    #[error("{path}: encoding mismatch: expected 16-bit integer PCM, got {got}")]
    EncodingMismatch { path: String, got: String },

    #[error("{path}: not a RIFF/WAVE file: {detail}")]
    WavFormat { path: String, detail: String },

    #[error("protocol parse error at line {line}: {msg}")]
    Protocol { line: usize, msg: String },

    #[error("score file parse error at line {line}: {msg}")]
    Scores { line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint checksum mismatch (file corrupt or truncated)")]
    ChecksumMismatch,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// CLI exit code class: 1 usage, 2 I/O, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) => 1,
            Error::NonFinite { .. }
            | Error::NonScalarLoss { .. }
            | Error::GraphConsumed
            | Error::ZeroNormEmbedding
            | Error::NanGradient { .. }
            | Error::ShapeMismatch { .. }
            | Error::SingleClass { .. }
            | Error::MissingAsvRates => 3,
            _ => 2,
        }
    }
}
