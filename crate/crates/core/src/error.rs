use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Stream(#[from] std::io::Error),

    #[error("graph construction failed: {0}")]
    Graph(String),

    #[error("invalid split: {0}")]
    Split(String),

    #[error("empty graph: {0}")]
    EmptyGraph(&'static str),

    #[error("rule table: {0}")]
    Rules(String),

    #[error("sampling: {0}")]
    Sampling(String),

    #[error("invalid model configuration: {0}")]
    ModelConfig(String),

    #[error("operation requires {required} model, checkpoint holds {found}")]
    WrongModel { required: &'static str, found: String },

    #[error("training: {0}")]
    Training(String),

    #[error("evaluation: {0}")]
    Eval(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
