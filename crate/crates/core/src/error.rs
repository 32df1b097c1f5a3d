use std::path::PathBuf;

use crate::protocol::QubitId;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid factory configuration: {0}")]
    InvalidConfig(String),

    #[error("yield threshold violated: eps={eps} must be below 1/(3k+8) = {limit} for k={k}")]
    YieldThreshold { eps: f64, k: usize, limit: f64 },

    #[error("no odd code distance up to {max} reaches error budget {budget:e} at physical error {eps_phys:e}")]
    InfeasibleDistance { budget: f64, eps_phys: f64, max: u32 },

    #[error("invalid circuit: {0}")]
    InvalidCircuit(String),

    #[error("qubit {0} is not placed in the mapping")]
    Unmapped(QubitId),

    #[error("invalid mapping: {0}")]
    InvalidMapping(String),

    #[error("grid {width}x{height} cannot hold {needed} qubits")]
    GridTooSmall { width: usize, height: usize, needed: usize },

    #[error("edge spacing needs at least two edges, graph has {0}")]
    TooFewEdges(usize),

    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),

    #[error("port assignment infeasible: {0}")]
    InfeasibleWiring(String),

    #[error("gate {gate} cannot be routed even on an empty mesh")]
    Unroutable { gate: usize },

    #[error("braid conflict at timestep {timestep}: cell ({x},{y}) claimed twice")]
    BraidConflict { timestep: usize, x: usize, y: usize },

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid experiment: {0}")]
    InvalidExperiment(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
