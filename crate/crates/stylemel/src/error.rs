//! Crate-wide error type.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two operands with incompatible shapes reached a primitive.
    #[error("shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A primitive was invoked with arguments it cannot handle.
    #[error("invalid argument to `{op}`: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    /// A non-finite value was produced; `op` names the first offending primitive.
    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: String },

    #[error("unknown token id {id} (vocabulary size {vocab})")]
    UnknownToken { id: u32, vocab: usize },

    #[error("unknown style id {id} (style count {count})")]
    UnknownStyle { id: u32, count: usize },

    #[error("unknown speaker id {id} (speaker count {count})")]
    UnknownSpeaker { id: u32, count: usize },

    #[error("training diverged (non-finite loss) at step {step}")]
    Diverged { step: u64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("bad config: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
