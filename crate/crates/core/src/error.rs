use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid {entity} `{id}`: {reason}")]
    InvalidEntity {
        entity: &'static str,
        id: String,
        reason: String,
    },

    #[error("invalid dataset: {}", .0.join("; "))]
    InvalidDataset(Vec<String>),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("overlapping voiced regions: ({0}, {1}) and ({2}, {3})")]
    OverlappingRegions(f64, f64, f64, f64),

    #[error("segment `{0}` has no assigned track")]
    Unassigned(String),

    #[error("unknown track `{0}`")]
    UnknownTrack(String),

    #[error("track `{0}` has no activity scores")]
    UnscoredTrack(String),

    #[error("need at least 2 segments to correlate, got {0}")]
    TooFewSegments(usize),

    #[error("average precision undefined without positive labels")]
    NoPositives,

    #[error("prediction coverage mismatch: {0}")]
    CoverageMismatch(String),

    #[error("missing ground truth for {0}")]
    MissingGroundTruth(String),

    #[error("search space of {0} assignments exceeds the brute-force bound")]
    SearchSpaceTooLarge(u128),

    #[error("infeasible world spec: {0}")]
    InfeasibleSpec(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn entity(entity: &'static str, id: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidEntity {
            entity,
            id: id.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
