use std::path::PathBuf;

use coref_autograd::GradError;

#[derive(Debug, thiserror::Error)]
pub enum CorefError {
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("segment of {len} tokens exceeds window payload {max}")]
    SegmentTooLong { len: usize, max: usize },

    #[error(transparent)]
    Shape(#[from] GradError),

    #[error("cluster confidence is undefined for an empty probability list")]
    EmptyPairProbs,

    #[error("unparseable verdict: {0:?}")]
    Verdict(String),

    #[error("invalid regrouping: {0}")]
    Regrouping(String),

    #[error("llm request failed: {0}")]
    Llm(String),

    #[error("scripted mock exhausted after {0} replies")]
    ScriptExhausted(usize),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },

    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CorefError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CorefError::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, CorefError>;
