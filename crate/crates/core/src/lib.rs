//! Tabular clinical risk prediction: cohort filtering, imputation, feature
//! selection, rebalancing, six model families, evaluation with calibration,
//! and Shapley attribution, plus a synthetic cohort generator.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod explain;
pub mod ingest;
pub mod isotonic;
pub mod missing;
pub mod models;
pub mod pipeline;
pub mod plot;
pub mod resample;
pub mod rng;
pub mod selection;
pub mod stats;
pub mod synth;

pub use dataset::{Dataset, FeatureKind, Standardizer};
pub use error::{Error, Result};
pub use models::{fit, FittedModel, ModelConfig, ModelSpec};
pub use pipeline::{run_pipeline, PipelineConfig, RunManifest};
