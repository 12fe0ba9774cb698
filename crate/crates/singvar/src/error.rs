use thiserror::Error;

/// Errors produced across the pipeline.
///
/// Variants are grouped loosely by how the CLI maps them to exit codes:
/// data/format problems exit with 3, numeric failures with 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no voiced frames")]
    NoVoicedFrames,

    #[error("frequency must be positive, got {0} Hz")]
    NonPositiveHz(f64),

    #[error("empty input")]
    EmptyInput,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate normalizer bin {bin}: min equals max ({value})")]
    DegenerateBin { bin: usize, value: f64 },

    #[error("f0 {0} Hz outside synthesizable range [50, 2000]")]
    F0OutOfRange(f64),

    #[error("sample rate mismatch: {0} vs {1}")]
    SampleRateMismatch(u32, u32),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unsupported version: {0}")]
    Version(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
