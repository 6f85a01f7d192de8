//! Error taxonomy shared by the library and the CLI.
//!
//! The CLI maps each category to a distinct exit code, so keep the
//! variants coarse: configuration, structure, format, numeric, io.

use std::io;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration: bad hyperparameter, unknown key, single-class split.
    #[error("configuration error: {0}")]
    Config(String),

    /// Shape or schema mismatch between two otherwise valid objects.
    #[error("structural error: {0}")]
    Structure(String),

    /// Malformed on-disk artifact (feature file, manifest, checkpoint).
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    /// NaN/Inf where a finite value is required, or a diverged computation.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn structure(msg: impl Into<String>) -> Self {
        Error::Structure(msg.into())
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format { offset, msg: msg.into() }
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Stable process exit code for this error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Format { .. } => 3,
            Error::Numeric(_) => 4,
            Error::Structure(_) => 5,
            Error::Io(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
