use std::path::PathBuf;

use crate::maze::CellState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid layout: {0}")]
    Layout(String),
    #[error("free cell {cell} is not connected to {origin}")]
    Disconnected { cell: CellState, origin: CellState },
    #[error("state {state} is not a free cell of layout {layout}")]
    InvalidState { state: CellState, layout: String },
    #[error("state {0} already equals the goal")]
    AtGoal(CellState),
    #[error("unknown layout {0:?}")]
    UnknownLayout(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("malformed file {path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("dataset layout {found} does not match maze {expected}")]
    LayoutMismatch { expected: String, found: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {context}: {detail}")]
    NonFinite { context: String, detail: String },
    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        what: String,
        iterations: usize,
        residual: f64,
    },
    #[error("trajectory of length {len} is shorter than k = {k}")]
    TooShort { len: usize, k: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn non_finite(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::NonFinite {
            context: context.into(),
            detail: detail.into(),
        }
    }
}
