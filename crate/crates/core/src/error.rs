use std::path::PathBuf;

use thiserror::Error;

use crate::align::AlignmentTransform;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("track not closed: endpoint gap {gap:.3} m exceeds {limit:.3} m")]
    TrackNotClosed { gap: f64, limit: f64 },

    #[error("reference line self-intersects (segments {first} and {second})")]
    SelfIntersecting { first: usize, second: usize },

    #[error("off-track point: distance {distance:.3} m exceeds bound {bound:.3} m")]
    OffTrack { distance: f64, bound: f64 },

    #[error("sample count mismatch: expected {expected}, got {actual}")]
    CountMismatch { expected: usize, actual: usize },

    #[error("no clean laps")]
    NoCleanLaps,

    #[error("registration failed: loss {:.3} m exceeds bound {bound:.3} m", .best.loss)]
    RegistrationFailed { best: AlignmentTransform, bound: f64 },

    #[error("infeasible bounds at sample {index}: lower {lower:.4} > upper {upper:.4}")]
    InfeasibleBounds { index: usize, lower: f64, upper: f64 },

    #[error("QP did not converge in {iterations} iterations (residual {residual:.3e})")]
    QpNotConverged {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("unreachable segment at sample {index} (curvature {curvature:.3e} 1/m)")]
    UnreachableSegment { index: usize, curvature: f64 },

    #[error("solver did not converge in {iterations} iterations (KKT error {kkt_residual:.3e})")]
    NotConverged { iterations: usize, kkt_residual: f64 },

    #[error("solver produced NaN at iteration {iteration}: {diagnostic}")]
    SolverNan { iteration: usize, diagnostic: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("corrupt weight file: {0}")]
    CorruptWeights(String),

    #[error("unsupported weight file version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
