use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::nn::NnError;
use crate::qsim::QsimError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] CorpusError),

    #[error(transparent)]
    Quantum(#[from] QsimError),

    #[error(transparent)]
    Nn(#[from] NnError),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("incompatible checkpoint and corpus: {0}")]
    Compatibility(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite loss in epoch {epoch}, batch {batch}; sample indices {samples:?}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        samples: Vec<usize>,
    },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the failure stems from user input (bad files, flags or
    /// configuration) rather than a defect in the pipeline itself.
    pub fn is_user_error(&self) -> bool {
        match self {
            Error::Corpus(_)
            | Error::Config(_)
            | Error::Checkpoint(_)
            | Error::Compatibility(_)
            | Error::Io { .. } => true,
            Error::Quantum(QsimError::Config(_)) => true,
            Error::Quantum(_) | Error::Nn(_) | Error::Contract(_) | Error::NonFinite { .. } => {
                false
            }
        }
    }
}
