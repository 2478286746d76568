use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the quantization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("layer `{layer}`: {message}")]
    Layer { layer: String, message: String },

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("corrupt manifest: {0}")]
    CorruptManifest(String),

    #[error("truncated blob while reading layer `{layer}`: need {needed} bytes at offset {offset}, blob has {available}")]
    TruncatedBlob {
        layer: String,
        offset: u64,
        needed: u64,
        available: u64,
    },

    #[error("bad magic in {path}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("evaluation failed while processing layer `{layer}`: {source}")]
    Evaluation {
        layer: String,
        #[source]
        source: Box<Error>,
    },

    #[error("evaluator returned a non-finite metric ({0})")]
    NonFiniteMetric(f64),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn layer(layer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Layer {
            layer: layer.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
