use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{format} parse error at byte {offset}: {message}")]
    Parse { format: &'static str, offset: usize, message: String },
    #[error("PLY is missing property `{0}`")]
    MissingProperty(String),
    #[error("PLY property count mismatch: {0}")]
    PropertyCount(String),
    #[error("{0}: big-endian data is not supported")]
    UnsupportedEndianness(&'static str),
    #[error("PNG error: {0}")]
    Png(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("config error in {}: {message}", path.display())]
    Config { path: PathBuf, message: String },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] thermosplat_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}
