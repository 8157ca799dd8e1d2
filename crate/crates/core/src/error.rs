use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty stroke at line {line} (stroke index {stroke})")]
    EmptyStroke { line: usize, stroke: usize },

    #[error("stroke has no timestamps; use spatial_resample for timestamp-free strokes")]
    MissingTimestamps,

    #[error("curve parameter t = {0} is outside [0, 1]")]
    CurveParameter(f64),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty drawing context: draw a first stroke")]
    EmptyContext,

    #[error("silhouette: {0}")]
    Clustering(String),

    #[error("checkpoint schema version {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged at step {step}: {detail}")]
    Diverged {
        step: usize,
        detail: String,
        /// The offending batch as NDJSON, for post-mortem inspection.
        batch_dump: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
