use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),

    #[error("input too short: {len} samples, model needs at least {min}")]
    InputTooShort { len: usize, min: usize },

    #[error("sample-rate mismatch: expected {expected} Hz, got {actual} Hz")]
    SampleRateMismatch { expected: u32, actual: u32 },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("degenerate embedding: model output has zero norm")]
    DegenerateEmbedding,

    #[error("model {0} is not differentiable")]
    NonDifferentiable(String),

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("single-class input: EER needs at least one genuine and one impostor trial")]
    SingleClass,

    #[error("corpus too small: {0}")]
    CorpusTooSmall(String),

    #[error("training divergence: {0}")]
    TrainingDivergence(String),

    #[error("invalid attack config: {0}")]
    InvalidAttackConfig(String),

    #[error("empty surrogate list")]
    EmptyModelList,

    #[error("invalid device preset: {0}")]
    InvalidPreset(String),

    #[error("preset kind mismatch: expected {expected}, got {actual}")]
    PresetKindMismatch { expected: String, actual: String },

    #[error("degenerate impulse response: {0}")]
    DegenerateImpulseResponse(String),

    #[error("position outside room: {0}")]
    OutsideRoom(String),

    #[error("analysis failure on silence")]
    SilentInput,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate features: {0}")]
    DegenerateFeatures(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("non-unique path in manifest: {0}")]
    DuplicatePath(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("missing resource: {}", .0.display())]
    MissingResource(PathBuf),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("model container: {0}")]
    Container(String),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }
}
