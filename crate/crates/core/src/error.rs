use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid world spec: {0}")]
    InvalidSpec(String),

    #[error("tree placement exhausted: placed {achieved} of {requested} trees")]
    PlacementExhausted { requested: usize, achieved: usize },

    #[error("target position ({x:.2}, {y:.2}) lies outside the world extent")]
    OutOfExtent { x: f64, y: f64 },

    #[error("push of {requested:.2} m exceeds the {max:.2} m limit")]
    PushTooLarge { requested: f64, max: f64 },

    #[error("pose is not finite")]
    NonFinitePose,

    #[error("unknown pose-graph node {0}")]
    UnknownNode(usize),

    #[error("illegal mission transition: {event} while {phase}")]
    IllegalTransition { phase: String, event: String },

    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(String),

    #[error("degenerate terrain: {0}")]
    DegenerateTerrain(String),

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("reconstruction failed: {0}")]
    ReconstructionFailed(String),

    #[error("circle heights are not strictly increasing")]
    NonMonotoneHeights,

    #[error("interventions overlap or are out of order at record {index}")]
    OverlappingInterventions { index: usize },

    #[error("intervention {index} lies outside the mission span")]
    InterventionOutOfSpan { index: usize },

    #[error("malformed PLY at byte {offset}: {message}")]
    Ply { offset: u64, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("mission invariant violated: {0}")]
    Invariant(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
