//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("qrels reference unknown document id {doc_id:?}")]
    DanglingDoc { doc_id: String },

    #[error("qrels reference unknown query id {query_id:?}")]
    DanglingQuery { query_id: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("training aborted at epoch {epoch}, batch {batch}, query {query_id:?}: {msg}")]
    TrainAbort {
        epoch: usize,
        batch: usize,
        query_id: String,
        msg: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
