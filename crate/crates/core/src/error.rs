use thiserror::Error;

/// Errors produced anywhere in the attribution pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training diverged at step {step}: {reason}")]
    Training { step: usize, reason: String },

    #[error("world construction failed: {0}")]
    Construction(String),

    #[error("evaluation of coalition {mask:#b} failed: {source}")]
    Evaluation {
        mask: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("protocol error: {message} (raw: {raw})")]
    Protocol { message: String, raw: String },

    #[error("remote error: {0}")]
    Remote(String),

    #[error("connection error: {0}")]
    Connection(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

pub(crate) fn ensure_len(what: &str, actual: usize, expected: usize) -> Result<()> {
    if actual != expected {
        return Err(shape_err(format!("{what}: length {actual}, expected {expected}")));
    }
    Ok(())
}
