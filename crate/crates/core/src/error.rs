use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Wrong magic, malformed header, unsupported dtype or interleave.
    #[error("format error: {0}")]
    Format(String),

    /// Payload size disagrees with the header.
    #[error("length error: expected {expected} values, found {found}")]
    Length { expected: usize, found: usize },

    /// Non-finite or otherwise invalid sample values.
    #[error("data error: {0}")]
    Data(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("placement error: {0}")]
    Placement(String),

    #[error("layout error: {0}")]
    Layout(String),

    #[error("architecture error: {0}")]
    Architecture(String),

    /// An operation was called in the wrong network mode.
    #[error("state error: {0}")]
    State(String),

    #[error("batch error: {0}")]
    Batch(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
