use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value violates a documented invariant.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure in {what}: {detail}")]
    Numerical { what: String, detail: String },

    /// The augmented density matrix would not fit into the memory cap.
    #[error("augmented density matrix needs {required_bytes} bytes, cap is {cap_bytes} bytes")]
    Resource { required_bytes: u64, cap_bytes: u64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
