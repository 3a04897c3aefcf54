//! Crate-wide error type. CLI exit codes map onto these variants.

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad configuration: unknown key, invalid value, inconsistent dims.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed file content (records, checkpoints, manifests).
    #[error("format error: {0}")]
    Format(String),

    /// A required input artifact (checkpoint, corpus, splits file) is absent.
    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(String),

    /// Training produced a non-finite loss; a diagnostic snapshot is written
    /// before this is raised.
    #[error("training diverged: {0}")]
    Diverged(String),

    /// Data violates an invariant the caller was expected to uphold.
    #[error("invalid data: {0}")]
    InvalidData(String),
}

pub type Result<T> = std::result::Result<T, Error>;
