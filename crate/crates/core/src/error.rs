use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("graph has no nodes")]
    EmptyGraph,

    #[error("sensitive group {0} is empty")]
    EmptyGroup(u8),

    #[error("{what} at node {index} must be 0 or 1, got {value}")]
    NonBinary {
        what: &'static str,
        index: usize,
        value: i64,
    },

    #[error("graph has no edges")]
    NoEdges,

    #[error("edge ({0}, {1}) references a node outside the graph")]
    DanglingEdge(usize, usize),

    #[error("node {0} has no neighbours; add self loops before theorem-mode propagation")]
    IsolatedNode(usize),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("invalid sample: {0}")]
    Sample(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Undefined(String),

    #[error("parse error in {path}: {detail}")]
    Parse { path: PathBuf, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            detail: detail.into(),
        }
    }

    /// Whether the failure is numeric (shape or non-finite) rather than a data problem.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Shape { .. } | Error::NonFinite(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
