use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty point cloud")]
    EmptyCloud,

    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate projection extent")]
    DegenerateProjection,

    #[error("gradient blow-up")]
    GradientBlowUp,

    #[error("training diverged at epoch {epoch} (loss {loss:.6e}, initial {initial:.6e})")]
    Diverged { epoch: usize, loss: f64, initial: f64 },

    #[error("empty memory bank")]
    EmptyBank,

    #[error("cannot calibrate: one class absent")]
    SingleClass,

    #[error("undefined AUROC: {0}")]
    UndefinedAuroc(String),

    #[error("no anomaly regions")]
    NoRegions,

    #[error("mask bounds unsatisfiable after {0} attempts")]
    MaskBounds(usize),

    #[error("linear fuser has not been fitted")]
    LinearNotFitted,

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("config hash mismatch for {artifact}: expected {expected}, found {found}")]
    HashMismatch {
        artifact: String,
        expected: String,
        found: String,
    },

    #[error("parse error in {}: line {line}: {msg}", .path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("evaluation undefined: {0}")]
    EvaluationUndefined(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for this error: 2 for input/artifact problems, 3 when a metric
    /// is undefined, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::EmptyCloud
            | Error::InvalidCloud(_)
            | Error::EmptyTrainingSet
            | Error::MissingArtifact(_)
            | Error::HashMismatch { .. }
            | Error::Parse { .. }
            | Error::Config(_)
            | Error::Io(_)
            | Error::Json(_) => 2,
            Error::EvaluationUndefined(_) | Error::UndefinedAuroc(_) | Error::NoRegions => 3,
            _ => 1,
        }
    }
}
