use std::path::PathBuf;

use thiserror::Error;

use crate::x86::DecodeError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("graph `{graph_id}`: {detail}")]
    InvariantViolation { graph_id: String, detail: String },

    #[error("graph `{graph_id}`: unknown node `{node_id}`")]
    UnknownNode { graph_id: String, node_id: String },

    #[error("graph `{graph_id}`, node `{node_id}`, instruction {index}: {source}")]
    Decode {
        graph_id: String,
        node_id: String,
        index: usize,
        #[source]
        source: DecodeError,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("graph `{0}` has no nodes")]
    EmptyGraph(String),

    #[error("graph `{0}` has no edges to explain")]
    NoEdges(String),

    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("bad embedding table: {0}")]
    BadTable(String),

    #[error("bad synthetic spec: {0}")]
    BadSpec(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invariant(graph_id: &str, detail: impl Into<String>) -> Self {
        Error::InvariantViolation {
            graph_id: graph_id.to_string(),
            detail: detail.into(),
        }
    }

    /// Process exit code used by the command-line tool: 1 for bad configuration, 2 for data
    /// errors, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFiniteLoss { .. } => 3,
            Error::Config(_) => 1,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
