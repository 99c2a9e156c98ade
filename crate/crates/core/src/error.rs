use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value or combination of values that can never run.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A call-site contract was broken (length mismatch, empty input, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// NaN or infinity showed up where a finite number was required.
    #[error("numeric error in {context}")]
    Numeric { context: String },

    /// A client update failed numerically and the run policy is to abort.
    #[error("client {client} failed: {source}")]
    Client {
        client: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("corrupt payload: {0}")]
    CorruptPayload(String),

    /// Malformed dataset file. `location` is a byte offset or a line number.
    #[error("{}: format error at {location}: {message}", path.display())]
    Format {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn numeric(context: impl Into<String>) -> Self {
        Error::Numeric {
            context: context.into(),
        }
    }

    /// True for errors caused by non-finite arithmetic, including those
    /// wrapped with a client id.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::Numeric { .. } => true,
            Error::Client { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}
