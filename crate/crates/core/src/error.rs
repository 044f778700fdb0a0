use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two operands had incompatible shapes.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A file could not be decoded. `location` is a line number for text
    /// formats and a byte offset for binary ones.
    #[error("parse error in {path}{location}: {message}", path = .path.display())]
    Parse {
        path: PathBuf,
        location: Location,
        message: String,
    },

    /// Training produced a non-finite loss.
    #[error("non-finite loss at epoch {epoch}, step {step} (batch {batch_index}): {terms}")]
    NonFinite {
        epoch: usize,
        step: usize,
        batch_index: usize,
        terms: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where in a file a parse error happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Unknown,
    Line(u64),
    LineColumn(u64, u64),
    Byte(u64),
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Location::Unknown => Ok(()),
            Location::Line(l) => write!(f, " (line {l})"),
            Location::LineColumn(l, c) => write!(f, " (line {l}, column {c})"),
            Location::Byte(b) => write!(f, " (byte offset {b})"),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
