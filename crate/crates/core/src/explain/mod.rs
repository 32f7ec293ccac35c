//! Model-agnostic attributions: sampling Shapley values, permutation
//! importance, tree gain importance and dependence exports.

mod export;
mod importance;
mod shapley;

pub use export::{write_dependence_csv, write_importance_csv, write_shap_csv};
pub use importance::{
    gain_importance, permutation_importance, shap_importance, FeatureScore, ImportanceMethod, ImportanceMetric,
    ImportanceReport,
};
pub use shapley::{
    dependence_export, explain_instances, sample_background, shapley_sampling, Attribution, DependencePoint,
    FnPredictor, ModelOutput, OutputUnits, Predictor, ShapleyConfig,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("degenerate metric: {0}")]
    Degenerate(String),
    #[error("model evaluation failed: {0}")]
    Model(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
