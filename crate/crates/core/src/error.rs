use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid sample `{id}`: {msg}")]
    InvalidSample { id: String, msg: String },

    #[error("invalid label space: {0}")]
    InvalidLabelSpace(String),

    #[error("invalid synthetic spec: {0}")]
    InvalidSynthetic(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("{kind} distance does not apply to {modality} data")]
    ModalityMismatch {
        kind: &'static str,
        modality: &'static str,
    },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid probability vector: {0}")]
    InvalidProbability(String),

    #[error("index {index} out of range for {len} samples")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("no label for memory `{0}`")]
    MissingMemoryLabel(String),

    #[error("budget infeasible: {0}")]
    BudgetInfeasible(String),

    #[error("id `{0}` not found in ground truth")]
    UnknownId(String),

    #[error("label provider refused: {0}")]
    ProviderRefused(String),

    #[error("session error: {0}")]
    Session(String),

    #[error("degenerate label matrix: {0}")]
    Degenerate(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn sample(id: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::InvalidSample {
            id: id.into(),
            msg: msg.into(),
        }
    }
}
