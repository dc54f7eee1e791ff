use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("duplicate name: {0}")]
    Duplicate(String),

    #[error("checkpoint field `{field}`: {detail}")]
    Checkpoint { field: String, detail: String },

    #[error("invalid config: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("guard invariant violated at step {step}: chosen delta {chosen} > fallback delta {fallback}")]
    GuardViolation { step: usize, chosen: f64, fallback: f64 },

    #[error("meta-training diverged at epoch {epoch}, period {period}: loss {loss}, |x| = {iterate_norm}, |g| = {direction_norm}")]
    Diverged {
        epoch: usize,
        period: usize,
        loss: f64,
        iterate_norm: f64,
        direction_norm: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
