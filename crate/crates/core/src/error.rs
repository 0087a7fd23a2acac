use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("data error for subject {subject}: {message}")]
    Data { subject: String, message: String },

    #[error("non-finite loss at step {step}: {message}")]
    NonFinite { step: usize, message: String },

    #[error("leakage guard: {0}")]
    Leakage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("nifti: {0}")]
    Nifti(String),

    #[error("image: {0}")]
    Image(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn data(subject: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Data {
            subject: subject.into(),
            message: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line tool: 2 config, 3 data, 4 numeric, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) | Error::Leakage(_) => 2,
            Error::Data { .. } | Error::Nifti(_) | Error::Io { .. } | Error::Shape(_) => 3,
            Error::NonFinite { .. } => 4,
            _ => 1,
        }
    }
}
