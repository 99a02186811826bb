use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("timestep {t} out of range 0..={max}")]
    TimestepOutOfRange { t: usize, max: usize },

    #[error("reverse step undefined at t = 0")]
    UndefinedStep,

    #[error("invalid grid: n_steps = {n_steps} with t_star = {t_star} (need 1 <= n_steps <= t_star <= {max})")]
    InvalidGrid { t_star: usize, n_steps: usize, max: usize },

    #[error("invalid step: t = {t} must exceed t_next = {t_next}")]
    InvalidStep { t: usize, t_next: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate condition: zero-norm embedding not flagged as null")]
    DegenerateCondition,

    #[error("degenerate embedding: zero-norm image embedding")]
    DegenerateEmbedding,

    #[error("degenerate keyword pool: selected similarity {value} is not positive")]
    DegeneratePool { value: f64 },

    #[error("degenerate statistics: {0}")]
    DegenerateStats(String),

    #[error("metric undefined: {0}")]
    MetricUndefined(&'static str),

    #[error("undefined mask: ground truth has no positive cell")]
    UndefinedMask,

    #[error("non-finite loss {loss} at step {step} (learning rate {learning_rate})")]
    NonFiniteLoss { step: usize, learning_rate: f64, loss: f64 },

    #[error("generation error: {0}")]
    Generation(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("digest mismatch: {what} (expected {expected}, found {found})")]
    DigestMismatch { what: String, expected: String, found: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, message: message.into() }
    }

    /// Process exit code: 1 for user or configuration problems, 2 for broken
    /// internal invariants.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invariant(_) | Error::NonFiniteLoss { .. } => 2,
            _ => 1,
        }
    }
}
