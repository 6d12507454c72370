//! Error types shared across the crate.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure class, used by callers (the CLI) to map errors to exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Invalid parameters or configuration supplied by the caller.
    Validation,
    /// Bad, missing, or corrupt data on disk.
    Data,
    /// Numerical failure at runtime (divergence, non-finite values, degenerate scale).
    Numerical,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid {field}: {message}")]
    InvalidSpec {
        field: &'static str,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged: non-finite loss at step {step}")]
    TrainingDiverged { step: usize },

    #[error("non-finite activation recorded for sample {sample_id}")]
    CorruptActivation { sample_id: u64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("zero variance in sample ({context})")]
    ZeroVariance { context: &'static str },

    #[error("layer {layer} not recorded in activation set")]
    UnknownLayer { layer: usize },

    #[error("concept {concept} not present")]
    UnknownConcept { concept: usize },

    #[error("size mismatch: {context} (expected {expected}, found {found})")]
    SizeMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("format version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u16, found: u16 },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("truncated file: needed {needed} more byte(s) at offset {offset}")]
    Truncated { offset: usize, needed: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidSpec { .. } | Error::Config(_) => ErrorClass::Validation,
            Error::TrainingDiverged { .. }
            | Error::CorruptActivation { .. }
            | Error::ZeroVariance { .. } => ErrorClass::Numerical,
            Error::EmptyInput(_)
            | Error::UnknownLayer { .. }
            | Error::UnknownConcept { .. }
            | Error::SizeMismatch { .. }
            | Error::BadMagic { .. }
            | Error::VersionMismatch { .. }
            | Error::ChecksumMismatch { .. }
            | Error::Truncated { .. }
            | Error::Io { .. }
            | Error::Json { .. } => ErrorClass::Data,
        }
    }
}
