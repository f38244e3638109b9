use std::io;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric error at index {index}: {context}")]
    Numeric { context: String, index: usize },
    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("template error: {0}")]
    Template(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(what: &'static str, expected: usize, got: usize) -> Self {
        Error::Shape {
            what,
            expected,
            got,
        }
    }

    pub(crate) fn numeric(context: impl Into<String>, index: usize) -> Self {
        Error::Numeric {
            context: context.into(),
            index,
        }
    }
}
