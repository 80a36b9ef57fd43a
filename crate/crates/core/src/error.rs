use thiserror::Error;

/// Errors raised across the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("event scheduled in the past: at={at} ms, clock={clock} ms")]
    PastEvent { at: u64, clock: u64 },

    #[error("duplicate participant guid {0}")]
    DuplicateGuid(String),

    #[error("unknown overlay node {0}")]
    UnknownNode(usize),

    #[error("node {dst} unreachable from {src}")]
    Unreachable { src: usize, dst: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("replay buffer holds {have} transitions, batch needs {need}")]
    BufferUnderfull { have: usize, need: usize },

    #[error("no samples")]
    EmptySamples,

    #[error("environment not initialized")]
    Uninitialized,

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
