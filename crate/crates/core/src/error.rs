use thiserror::Error;

/// Errors surfaced by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch for `{name}`: expected {expected}, got {got}")]
    Shape {
        name: String,
        expected: String,
        got: String,
    },

    #[error("input error: {0}")]
    Input(String),

    #[error("context overflow: {len} tokens exceed max context {max}")]
    ContextOverflow { len: usize, max: usize },

    #[error("environment error: {0}")]
    Env(String),

    #[error("invariant breach: {0}")]
    Invariant(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub fn shape(name: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            name: name.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
