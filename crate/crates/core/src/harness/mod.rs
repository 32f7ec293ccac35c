//! Training loops, optimizers, metrics, group summaries and the experiment
//! matrix with its report files.

mod config;
mod experiment;
mod group;
mod metrics;
mod optim;
mod report;
mod train;

pub use config::{DataConfig, ExperimentConfig, SyntheticData};
pub use experiment::{
    data_fingerprint, fingerprint, run_experiment, CellResult, ExperimentResult, Predictions, SplitMetrics,
    BACKGROUND_ROWS,
};
pub use group::{group_summary, index_value, CharacteristicRow, GroupMetrics, GroupSummary, Grouping};
pub use metrics::{
    auc, classification_report, regression_report, roc_points, trapezoid_area, Averaging, ClassificationMetrics,
    Confusion, RegressionMetrics,
};
pub use optim::{Optimizer, OptimizerConfig};
pub use report::{render_report, write_curves, write_metrics_csv};
pub use train::{prepare_task, train, train_net, EpochRecord, History, LossKind, SplitData, TaskData, TrainConfig};

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::nets::NetError;
use crate::trees::TreeError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("undefined metric: {0}")]
    Metric(String),
    #[error("training diverged in epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Model(Box<crate::Error>),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<crate::Error> for HarnessError {
    fn from(e: crate::Error) -> Self {
        HarnessError::Model(Box::new(e))
    }
}

impl HarnessError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
