use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("episode already terminated at step {step} (horizon {horizon})")]
    Terminated { step: usize, horizon: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("demonstration store is empty")]
    EmptyDemoStore,

    #[error("scripted goal capture did not reach insertion")]
    GoalCaptureFailed,

    #[error("scripted demonstration failed after {attempts} attempts")]
    DemoFailed { attempts: usize },

    #[error("frame shape mismatch: {0} vs {1}")]
    FrameShape(usize, usize),

    #[error("nothing to plot: {0}")]
    EmptyPlot(String),

    #[error("malformed metrics file {path}: {reason}")]
    MalformedCsv { path: PathBuf, reason: String },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("hash mismatch for {path}: manifest {expected}, on disk {actual}")]
    Corrupt {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),

    #[error("schema mismatch: expected {expected}, got {got}")]
    Schema { expected: String, got: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
