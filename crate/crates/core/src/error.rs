use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file {path} ({context})")]
    MissingFile { path: PathBuf, context: String },

    #[error("shape mismatch ({context}): {detail}")]
    ShapeMismatch { context: String, detail: String },

    #[error("non-finite value ({context})")]
    NonFinite { context: String },

    #[error("event index out of range ({context}): {detail}")]
    EventOutOfRange { context: String, detail: String },

    #[error("parse error ({context}): {detail}")]
    Parse { context: String, detail: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("unknown subject '{0}'")]
    UnknownSubject(String),

    #[error("subject '{0}' already has a head")]
    SubjectExists(String),

    #[error("zero target variance ({0})")]
    ZeroVariance(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// Short machine-readable tag, used by the CLI's JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MissingFile { .. } => "missing_file",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::NonFinite { .. } => "non_finite",
            Error::EventOutOfRange { .. } => "event_out_of_range",
            Error::Parse { .. } => "parse",
            Error::Invalid(_) => "invalid",
            Error::UnknownSubject(_) => "unknown_subject",
            Error::SubjectExists(_) => "subject_exists",
            Error::ZeroVariance(_) => "zero_variance",
            Error::Divergence { .. } => "divergence",
        }
    }
}
