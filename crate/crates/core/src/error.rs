use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported transition `{0}`")]
    UnsupportedTransition(String),
    #[error("invalid transition spec: {0}")]
    InvalidSpec(String),
    #[error("principle `{principle}` is not registered for transition `{transition}`")]
    UnknownPrinciple {
        principle: String,
        transition: String,
    },
    #[error("trajectory too short: {len} frames, need at least {needed}")]
    TrajectoryTooShort { len: usize, needed: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("taxonomy error: {0}")]
    Taxonomy(String),
    #[error("sample `{0}` was not retained by verification")]
    NotRetained(String),
    #[error("annotation failed for sample `{sample_id}`: {reason}")]
    Annotation { sample_id: String, reason: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("timestep {0} is outside [0, 1]")]
    Domain(f64),
    #[error("sequence of {len} tokens exceeds the context maximum of {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("numerical divergence at sampling step {0}")]
    Divergence(usize),
    #[error("non-finite {which} loss at step {step} (sample `{sample_id}`)")]
    NonFiniteLoss {
        which: &'static str,
        step: usize,
        sample_id: String,
    },
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: String, expected: u32 },
    #[error("checkpoint config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("checkpoint load error: {0}")]
    Checkpoint(String),
    #[error("verifier failed: {0}")]
    Verifier(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
