use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{what}: malformed data at byte offset {offset}: {msg}")]
    Format {
        what: String,
        offset: usize,
        msg: String,
    },

    #[error("non-finite {term} loss{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFinite { term: &'static str, step: Option<usize> },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(what: impl Into<String>, offset: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            offset,
            msg: msg.into(),
        }
    }

    /// True for failures caused by the filesystem rather than by bad data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
