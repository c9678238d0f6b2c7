use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] lgt_autodiff::Error),

    /// Malformed scenario document.
    #[error("{path}: parse error at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    /// A scenario invariant does not hold; `invariant` names it.
    #[error("invalid scenario ({invariant}): {detail}")]
    Validation {
        invariant: &'static str,
        detail: String,
    },

    #[error("target unobserved at reference time (agent {0})")]
    TargetUnobserved(usize),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("unknown connection type {0:?}")]
    UnknownConnectionType(String),

    #[error("empty history for agent {0}")]
    EmptyHistory(usize),

    #[error("no agents")]
    NoAgents,

    #[error("no lanes")]
    NoLanes,

    #[error("no keys")]
    NoKeys,

    #[error("classification loss undefined for K = {0} (needs K >= 2)")]
    ClassificationUndefined(usize),

    #[error("missing ground truth for scenario {0}")]
    MissingGroundTruth(String),

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}; parameter norms: {norms}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        loss: f64,
        norms: String,
    },

    #[error("trajectory exits map: {0}")]
    ExitsMap(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn validation(invariant: &'static str, detail: impl Into<String>) -> Self {
        Error::Validation {
            invariant,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
