use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {what} at {location}")]
    NonFinite { what: String, location: String },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("scene error: {0}")]
    Scene(String),
    #[error("optimizer error: {0}")]
    Optimizer(String),
}
