use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the framework.
///
/// The variants are grouped by what the caller can do about them: fix the
/// configuration, fix the data, or give up on a diverged run.
#[derive(Debug, Error)]
pub enum Error {
    /// Mismatched vector or matrix shapes between collaborating operations.
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid architecture at {layer}: {reason}")]
    Spec { layer: String, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// API called out of order (for example backward before any loss node).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("missing modality: {0}")]
    Modality(String),

    /// Non-finite value in loss, scores or gradients.
    #[error("divergence at {location}: {detail}")]
    Divergence { location: String, detail: String },

    #[error("corrupt data at byte offset {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("channel {channel} out of range (channel count {channels})")]
    ChannelRange { channel: u32, channels: u32 },

    #[error("pairing error: class {class} is absent from the {modality} set")]
    Pairing { class: usize, modality: &'static str },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("{path}: {source}")]
    Path {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn at_path(self, path: impl Into<PathBuf>) -> Self {
        Error::Path {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// Broad category, used by front ends to pick exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Spec { .. } | Error::Config(_) | Error::Usage(_) => ErrorKind::Config,
            Error::Divergence { .. } => ErrorKind::Divergence,
            Error::Path { source, .. } => source.kind(),
            Error::Json(_) => ErrorKind::Data,
            Error::Shape { .. }
            | Error::Modality(_)
            | Error::Corrupt { .. }
            | Error::Format(_)
            | Error::ChannelRange { .. }
            | Error::Pairing { .. }
            | Error::EmptyDataset(_)
            | Error::Io(_) => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Divergence,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Shape {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
