use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::oracle::OracleError;

pub type Result<T, E = EqaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum EqaError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("unknown memory index {0}")]
    UnknownIndex(u64),

    #[error("voxel grid expansion to {requested} voxels exceeds the cap of {cap}")]
    GridCap { requested: usize, cap: usize },

    #[error("memory bank {path}: {reason}")]
    Persist { path: PathBuf, reason: String },

    #[error("scene: {0}")]
    Scene(String),

    #[error("pose {0:?} is not traversable")]
    NotTraversable([f64; 2]),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Oracle(#[from] OracleError),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl EqaError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
