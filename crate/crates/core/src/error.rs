//! Crate-wide error type.

use thiserror::Error;

/// Errors produced anywhere in the routing/training pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A trajectory with no steps was passed where at least one is required.
    #[error("empty trajectory")]
    EmptyTrajectory,

    /// A trajectory violates a structural invariant.
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    /// A caller-supplied argument is out of range or inconsistent.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An operation requiring non-empty input received an empty one.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// A parameter or intermediate value is NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// Remote backend transport failure after all retries.
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    /// A remote response or adapter payload could not be parsed. Carries the
    /// raw payload for diagnosis.
    #[error("parse error: {message} (payload: {payload})")]
    Parse { message: String, payload: String },

    /// Scoring a trajectory failed (adapter path).
    #[error("scoring error: {0}")]
    Scoring(String),

    /// A checkpoint file is malformed or version-incompatible.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A pipeline stage was invoked without a required input artifact.
    #[error("missing input: {0}")]
    MissingInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
