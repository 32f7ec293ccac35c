use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::optim::OptimizerConfig;
use super::train::TrainConfig;
use super::HarnessError;
use crate::dataset::synth::{generate, SynthConfig};
use crate::dataset::{parse_csv, FeatureMask, ParticipantRecord, Source, TaskSpec};
use crate::model::ModelKind;

/// Where participant records come from. Real extracts take precedence over
/// the synthetic generator when both are given.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub nhanes: Option<PathBuf>,
    pub charls: Option<PathBuf>,
    pub synthetic: Option<SyntheticData>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticData {
    pub n: usize,
    /// CHARLS-shaped external records.
    pub external_n: usize,
    pub seed: u64,
}

impl Default for SyntheticData {
    fn default() -> Self {
        Self {
            n: 5000,
            external_n: 0,
            seed: 0,
        }
    }
}

/// Experiment matrix description, read from TOML:
///
/// ```toml
/// seed = 42
/// tasks = ["mets_class", "mets_regress"]
/// models = ["catboost", "tabkanet"]
/// mask = "full"
///
/// [data]
/// nhanes = "nhanes.csv"
/// charls = "charls.csv"
///
/// [train]
/// batch_size = 256
/// max_epochs = 500
/// patience = 20
/// optimizer = { kind = "adam_w", lr = 1e-3 }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub tasks: Vec<TaskSpec>,
    pub models: Vec<ModelKind>,
    pub mask: FeatureMask,
    pub data: DataConfig,
    /// Shared training settings; task, model, mask and seed are set per cell.
    pub train: TrainConfig,
    /// Replaces `train.optimizer` for the regression task.
    pub regression_optimizer: Option<OptimizerConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tasks: TaskSpec::ALL.to_vec(),
            models: ModelKind::ALL.to_vec(),
            mask: FeatureMask::full(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            regression_optimizer: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| HarnessError::io(&path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        // data paths are relative to the config file
        if let Some(dir) = path.as_ref().parent() {
            for p in [&mut cfg.data.nhanes, &mut cfg.data.charls].into_iter().flatten() {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("serializable config")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.tasks.is_empty() || self.models.is_empty() {
            return Err(HarnessError::Config(
                "experiment needs at least one task and one model".into(),
            ));
        }
        for task in &self.tasks {
            self.cell_config(*task, self.models[0]).validate()?;
        }
        Ok(())
    }

    pub fn cell_config(&self, task: TaskSpec, model: ModelKind) -> TrainConfig {
        let mut c = TrainConfig {
            task,
            model,
            mask: self.mask,
            seed: self.seed,
            ..self.train.clone()
        };
        if !task.is_classification() {
            if let Some(o) = self.regression_optimizer {
                c.optimizer = Some(o);
            }
        }
        c
    }

    /// NHANES-shaped then CHARLS-shaped records, with parse warnings.
    pub fn load_records(&self) -> Result<(Vec<ParticipantRecord>, Vec<String>), HarnessError> {
        let mut records = Vec::new();
        let mut warnings = Vec::new();
        match (&self.data.nhanes, &self.data.synthetic) {
            (Some(path), _) => {
                let (r, report) = parse_csv(path, Source::Nhanes)?;
                warnings.extend(report.warnings);
                records.extend(r);
            }
            (None, Some(s)) => records.extend(generate(&SynthConfig::new(s.n, Source::Nhanes, s.seed))),
            (None, None) => return Err(HarnessError::Config("no data source configured".into())),
        }
        match (&self.data.charls, &self.data.synthetic) {
            (Some(path), _) => {
                let (r, report) = parse_csv(path, Source::Charls)?;
                warnings.extend(report.warnings);
                records.extend(r);
            }
            (None, Some(s)) if s.external_n > 0 => records.extend(generate(&SynthConfig::new(
                s.external_n,
                Source::Charls,
                s.seed ^ 0x5eed,
            ))),
            _ => {}
        }
        Ok((records, warnings))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::NetConfig;

    #[test]
    fn parses_documented_example() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            seed = 42
            tasks = ["mets_class", "mets_regress"]
            models = ["catboost", "tabkanet"]
            mask = "simplified"
            regression_optimizer = { kind = "adam_w", lr = 1e-3 }

            [data.synthetic]
            n = 300

            [train]
            batch_size = 128
            max_epochs = 3
            [train.net]
            dim = 16
            heads = 2
            "#,
        )
        .unwrap();
        assert_eq!(cfg.models, [ModelKind::Catboost, ModelKind::Tabkanet]);
        assert_eq!(cfg.mask, FeatureMask::simplified());
        assert_eq!(cfg.data.synthetic.as_ref().unwrap().n, 300);
        let c = cfg.cell_config(TaskSpec::MetsRegress, ModelKind::Tabkanet);
        assert_eq!(c.optimizer(), OptimizerConfig::adamw(1e-3));
        assert_eq!((c.batch_size, c.max_epochs, c.seed), (128, 3, 42));
        assert_eq!(
            c.net,
            NetConfig {
                dim: 16,
                heads: 2,
                ..NetConfig::default()
            }
        );
        let k = cfg.cell_config(TaskSpec::MetsClass, ModelKind::Catboost);
        assert_eq!(k.optimizer(), OptimizerConfig::adamw(1e-3));
        assert_eq!(k.mask, FeatureMask::simplified());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig {
            seed: 3,
            data: DataConfig {
                synthetic: Some(SyntheticData::default()),
                ..DataConfig::default()
            },
            ..ExperimentConfig::default()
        };
        assert_eq!(ExperimentConfig::from_toml_str(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_toml_str("tasks = []").is_err());
        assert!(ExperimentConfig::from_toml_str("unknown_key = 1").is_err());
        assert!(ExperimentConfig::from_toml_str("models = [\"svm\"]").is_err());
        assert!(ExperimentConfig::from_toml_str("[train]\nbatch_size = 0").is_err());
    }

    #[test]
    fn no_data_source_is_an_error() {
        assert!(ExperimentConfig::default().load_records().is_err());
    }
}
