use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("duplicate (subject, admission) key ({subject}, {admission}) at row {row}")]
    DuplicateKey {
        subject: String,
        admission: String,
        row: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("only one class present in {0}")]
    SingleClass(&'static str),

    #[error("every feature was dropped (missingness above {threshold})")]
    AllFeaturesDropped { threshold: f64 },

    #[error("no feature has |r| within [{lo}, {hi}]")]
    EmptySelection { lo: f64, hi: f64 },

    #[error("correlation undefined: zero variance")]
    ZeroVariance,

    #[error("degenerate contingency table: a marginal is zero")]
    DegenerateTable,

    #[error("feature `{0}` has no observed values")]
    FeatureEntirelyMissing(String),

    #[error("SMO did not converge after {iterations} iterations (duality gap {gap:.3e})")]
    SmoNotConverged { iterations: usize, gap: f64 },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::FileNotFound(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
