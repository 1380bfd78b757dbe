use std::path::PathBuf;

/// Crate-wide error type.
///
/// Variants are grouped by failure class so callers can match on what went
/// wrong rather than parse strings: geometry problems (`Shape`), violated
/// API contracts (`Contract`), rejected configuration (`Config`), inputs
/// that are valid bytes but meaningless to operate on (`DegenerateInput`),
/// and file-level failures with the offending path attached.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or image geometry does not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// An API precondition was broken (missing gradient, scalar expected, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A configuration value or key is invalid.
    #[error("config error: {0}")]
    Config(String),

    /// The input is structurally fine but has no meaningful answer
    /// (all-zero ground truth, empty dataset, too-small image, ...).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// The file exists but its contents cannot be decoded.
    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: PathBuf, reason: String },

    /// The file decodes but uses a layout this crate does not handle.
    #[error("unsupported image {path}: {reason}")]
    UnsupportedImage { path: PathBuf, reason: String },

    /// Checkpoint does not start with the expected magic bytes.
    #[error("checkpoint has wrong magic bytes")]
    CheckpointMagic,

    /// Checkpoint declares a format version this build cannot read.
    #[error("unsupported checkpoint format version {0}")]
    CheckpointVersion(u32),

    /// Checkpoint ended in the middle of a record.
    #[error("checkpoint truncated: {0}")]
    CheckpointTruncated(String),

    /// Checkpoint is complete but a field holds a nonsensical value.
    #[error("checkpoint corrupt: {0}")]
    CheckpointCorrupt(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Convenience constructor for [`Error::Shape`].
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// Convenience constructor for [`Error::Contract`].
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// Convenience constructor for [`Error::Config`].
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Convenience constructor for [`Error::DegenerateInput`].
    pub fn degenerate(msg: impl Into<String>) -> Self {
        Error::DegenerateInput(msg.into())
    }
}
