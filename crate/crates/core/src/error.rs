use thiserror::Error;

use crate::dataset::DatasetError;
use crate::explain::ExplainError;
use crate::harness::HarnessError;
use crate::indices::IndexError;
use crate::nets::NetError;
use crate::numcore::NumError;
use crate::trees::TreeError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-level error; each module keeps its own error enum.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error("model: {0}")]
    Model(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
