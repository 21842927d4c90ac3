use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated model file: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("corrupt model: {0}")]
    CorruptModel(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("word id {word} out of range for vocabulary of size {vocab}")]
    Vocabulary { word: u32, vocab: u32 },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("redundancy rate undefined for a zero baseline count")]
    UndefinedRate,

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("workload error: {0}")]
    Workload(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration '{label}': {source}")]
    Config {
        label: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Short machine-readable tag, stable across releases.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Format(_) => "format",
            Error::Truncated { .. } => "truncated",
            Error::CorruptModel(_) => "corrupt_model",
            Error::Dimension(_) => "dimension",
            Error::Input(_) => "input",
            Error::Vocabulary { .. } => "vocabulary",
            Error::Protocol(_) => "protocol",
            Error::UndefinedRate => "undefined_rate",
            Error::Parameter(_) => "parameter",
            Error::Calibration(_) => "calibration",
            Error::Workload(_) => "workload",
            Error::Json(_) => "json",
            Error::Frame { source, .. } => source.kind(),
            Error::Config { source, .. } => source.kind(),
        }
    }

    pub(crate) fn in_frame(self, frame: usize) -> Error {
        Error::Frame {
            frame,
            source: Box::new(self),
        }
    }
}
