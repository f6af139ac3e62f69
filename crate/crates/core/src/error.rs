use std::path::PathBuf;

/// Errors raised anywhere in the recognition pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("codec error: {0}")]
    Codec(String),
    #[error("length error: {0}")]
    Length(String),
    #[error("render error: {0}")]
    Render(String),
    #[error("load error: {0}")]
    Load(String),
    #[error("lexicon error: {0}")]
    Lexicon(String),
    #[error("optimizer error: {0}")]
    Optimizer(String),
    #[error("checkpoint error at byte offset {offset}: {message}")]
    Checkpoint { offset: u64, message: String },
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input or configuration rather than a
    /// bug or an unexpected environment failure.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Numeric(_) | Error::Diverged(_))
    }
}
