use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, TseError>;

#[derive(Error, Debug)]
pub enum TseError {
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("reference signal has zero energy")]
    ZeroReference,
    #[error("mixture equals the target exactly; baseline SNR is infinite")]
    InfiniteBaseline,
    #[error("mixture has zero energy")]
    ZeroMixture,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("power must be strictly positive (signal {signal}, noise {noise})")]
    ZeroPower { signal: f64, noise: f64 },
    #[error("unknown class index {index} (vocabulary has {classes} classes)")]
    UnknownClass { index: usize, classes: usize },
    #[error("vocabulary of {available} classes cannot supply {required} foreground classes")]
    VocabTooSmall { required: usize, available: usize },
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("invalid audio: {0}")]
    InvalidAudio(String),
    #[error("input of {samples} samples is shorter than the {window}-sample window")]
    TooShort { samples: usize, window: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no inactive class available for an inactive-sample query")]
    NoInactiveAvailable,
    #[error("mixture has no active class")]
    NoActiveClass,
    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Divergence { epoch: usize, step: usize, detail: String },
    #[error("model has no classifier head; {0}")]
    NoClassifier(String),
    #[error("condition {condition} needs {required} classes but only {available} are available")]
    InsufficientClasses { condition: String, required: usize, available: usize },
    #[error("incompatible vocabulary: {0}")]
    IncompatibleVocabulary(String),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("WAV error: {0}")]
    Wav(#[from] hound::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}
