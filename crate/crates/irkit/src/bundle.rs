//! A directory of trained models served together.
//!
//! Layout, as written by `irkit train`: `models/*.irkm`, plus optional
//! `background.csv` (attribution reference rows) and `config.toml`. Model
//! ids are file stems, e.g. `mets_class_catboost`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use irkit_core::dataset::{parse_csv, Feature, FeatureMask, FeatureVector, ParticipantRecord, Source, TaskSpec};
use irkit_core::explain::{shapley_sampling, ModelOutput, OutputUnits};
use irkit_core::{Model, ModelKind};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::api::{
    ExplainRequest, ExplainResponse, FieldError, PredictRequest, PredictResponse, TaskOutput, WhatIfRequest,
    WhatIfResponse, SCHEMA_VERSION, VERSION,
};

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Model {
        path: String,
        #[source]
        source: irkit_core::Error,
    },
    #[error("background set: {0}")]
    Background(String),
    #[error("bundle {0} contains no models")]
    Empty(String),
}

/// Preference order when a request names no model.
pub const DEFAULT_ORDER: [ModelKind; 7] = [
    ModelKind::Catboost,
    ModelKind::Xgboost,
    ModelKind::Tabkanet,
    ModelKind::RandomForest,
    ModelKind::TabTransformer,
    ModelKind::Mlp,
    ModelKind::Linear,
];

#[derive(Debug)]
pub struct Entry {
    pub id: String,
    pub model: Model,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelInfo {
    pub id: String,
    pub task: TaskSpec,
    pub kind: ModelKind,
    pub display_name: String,
    pub mask: FeatureMask,
    pub features: Vec<Feature>,
    pub fingerprint: String,
}

/// Request-level failure carrying an HTTP status.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: u16,
    pub code: &'static str,
    pub message: String,
    pub fields: Vec<FieldError>,
}

impl ApiError {
    pub fn new(status: u16, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            fields: Vec::new(),
        }
    }

    pub fn validation(fields: Vec<FieldError>) -> Self {
        Self {
            status: 422,
            code: "validation_failed",
            message: "request failed validation".into(),
            fields,
        }
    }

    pub fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(500, "internal", e.to_string())
    }
}

#[derive(Debug)]
pub struct Bundle {
    pub dir: PathBuf,
    pub entries: Vec<Entry>,
    pub background: Vec<ParticipantRecord>,
    pub fingerprint: String,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> BundleError + '_ {
    move |source| BundleError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl Bundle {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, BundleError> {
        let dir = dir.as_ref().to_path_buf();
        let models_dir = if dir.join("models").is_dir() {
            dir.join("models")
        } else {
            dir.clone()
        };
        let mut files: Vec<PathBuf> = std::fs::read_dir(&models_dir)
            .map_err(io(&models_dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "irkm"))
            .collect();
        files.sort();
        let mut entries = Vec::with_capacity(files.len());
        for path in files {
            let model = Model::load(&path).map_err(|source| BundleError::Model {
                path: path.display().to_string(),
                source,
            })?;
            let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let fingerprint = model.fingerprint();
            entries.push(Entry { id, model, fingerprint });
        }
        if entries.is_empty() {
            return Err(BundleError::Empty(dir.display().to_string()));
        }
        let background_path = dir.join("background.csv");
        let background = if background_path.is_file() {
            parse_csv(&background_path, Source::Nhanes)
                .map_err(|e| BundleError::Background(e.to_string()))?
                .0
        } else {
            Vec::new()
        };

        let mut h = Sha256::new();
        h.update(b"irkit-bundle-v1\n");
        for e in &entries {
            h.update(format!("{} {}\n", e.id, e.fingerprint).as_bytes());
        }
        for name in ["background.csv", "config.toml"] {
            let p = dir.join(name);
            if p.is_file() {
                h.update(name.as_bytes());
                h.update(std::fs::read(&p).map_err(io(&p))?);
            }
        }
        let fingerprint = hex::encode(h.finalize());
        Ok(Self {
            dir,
            entries,
            background,
            fingerprint,
        })
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.id.clone()).collect()
    }

    pub fn infos(&self) -> Vec<ModelInfo> {
        self.entries
            .iter()
            .map(|e| ModelInfo {
                id: e.id.clone(),
                task: e.model.task,
                kind: e.model.kind,
                display_name: e.model.kind.display_name(e.model.task).to_string(),
                mask: e.model.mask,
                features: e.model.mask.features(),
                fingerprint: e.fingerprint.clone(),
            })
            .collect()
    }

    /// The model serving `task` for a request, or `None` when the bundle
    /// has no usable one. Among candidates, the model using the most of
    /// the supplied inputs wins.
    pub fn select(
        &self,
        selector: Option<&str>,
        task: TaskSpec,
        mask: FeatureMask,
    ) -> Result<Option<&Entry>, ApiError> {
        let usable = |e: &&Entry| e.model.task == task && e.model.mask.is_subset_of(mask);
        let best = |kind: ModelKind| {
            self.entries
                .iter()
                .filter(usable)
                .filter(|e| e.model.kind == kind)
                .max_by(|a, b| {
                    a.model
                        .mask
                        .count()
                        .cmp(&b.model.mask.count())
                        .then_with(|| b.id.cmp(&a.id))
                })
        };
        match selector {
            None => Ok(DEFAULT_ORDER.iter().find_map(|k| best(*k))),
            Some(s) => {
                if let Some(e) = self.entries.iter().find(|e| e.id == s) {
                    return Ok(usable(&e).then_some(e));
                }
                match s.parse::<ModelKind>() {
                    Ok(kind) if self.entries.iter().any(|e| e.model.kind == kind) => Ok(best(kind)),
                    _ => {
                        let mut e = ApiError::new(404, "unknown_model", format!("no model `{s}` in this bundle"));
                        e.fields
                            .push(FieldError::new("model", "not one of the bundle's model ids or kinds"));
                        Err(e)
                    }
                }
            }
        }
    }

    fn task_output(&self, entry: &Entry, vector: FeatureVector) -> Result<TaskOutput, ApiError> {
        let y = entry.model.predict(&[vector]).map_err(ApiError::internal)?[0];
        let task = entry.model.task;
        let threshold = task.index_kind().threshold();
        if !y.is_finite() {
            return Err(ApiError::internal(format!(
                "model {} produced a non-finite output",
                entry.id
            )));
        }
        Ok(if task.is_classification() {
            TaskOutput {
                model_id: entry.id.clone(),
                model: entry.model.kind,
                probability: Some(y.clamp(0.0, 1.0)),
                value: None,
                label: y > 0.5,
                index_threshold: threshold,
            }
        } else {
            TaskOutput {
                model_id: entry.id.clone(),
                model: entry.model.kind,
                probability: None,
                value: Some(y),
                label: y > threshold,
                index_threshold: threshold,
            }
        })
    }

    fn encode(entry: &Entry, inputs: &ParticipantRecord) -> Result<FeatureVector, ApiError> {
        entry
            .model
            .encoder
            .encode_masked(inputs, entry.model.mask)
            .map_err(|e| ApiError::validation(vec![FieldError::new("features", e.to_string())]))
    }

    fn plan(&self, req: &PredictRequest) -> Result<Vec<&Entry>, ApiError> {
        let mut plan = Vec::new();
        for task in TaskSpec::ALL {
            if let Some(e) = self.select(req.model.as_deref(), task, req.mask)? {
                plan.push(e);
            }
        }
        if plan.is_empty() {
            let wanted = req.model.as_deref().unwrap_or("any model");
            return Err(ApiError::validation(vec![FieldError::new(
                "mask",
                format!("no {wanted} in this bundle can predict from inputs `{}`", req.mask),
            )]));
        }
        Ok(plan)
    }

    fn respond(&self, plan: &[&Entry], req: &PredictRequest) -> Result<PredictResponse, ApiError> {
        let mut outputs = BTreeMap::new();
        for e in plan {
            outputs.insert(e.model.task, self.task_output(e, Self::encode(e, &req.inputs)?)?);
        }
        Ok(PredictResponse {
            schema_version: SCHEMA_VERSION,
            version: VERSION.into(),
            fingerprint: self.fingerprint.clone(),
            mask: req.mask,
            outputs,
        })
    }

    pub fn predict(&self, req: &PredictRequest) -> Result<PredictResponse, ApiError> {
        self.respond(&self.plan(req)?, req)
    }

    pub fn whatif(&self, req: &WhatIfRequest) -> Result<WhatIfResponse, ApiError> {
        let plan = self.plan(&req.base)?;
        let mut point = req.base.clone();
        let responses = req
            .values
            .iter()
            .map(|v| {
                crate::api::set_numeric(&mut point.inputs, req.feature, *v);
                self.respond(&plan, &point)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(WhatIfResponse {
            schema_version: SCHEMA_VERSION,
            version: VERSION.into(),
            fingerprint: self.fingerprint.clone(),
            feature: req.feature,
            values: req.values.clone(),
            responses,
        })
    }

    /// Background rows encoded for `entry`; rows missing any of its inputs
    /// are skipped.
    pub fn background_for(&self, entry: &Entry) -> Vec<FeatureVector> {
        self.background
            .iter()
            .filter_map(|r| entry.model.encoder.encode_masked(r, entry.model.mask).ok())
            .collect()
    }

    pub fn explain(&self, req: &ExplainRequest) -> Result<ExplainResponse, ApiError> {
        let Some(entry) = self.select(req.base.model.as_deref(), req.task, req.base.mask)? else {
            return Err(ApiError::validation(vec![FieldError::new(
                "task",
                format!(
                    "no model in this bundle predicts {} from inputs `{}`",
                    req.task, req.base.mask
                ),
            )]));
        };
        let background = self.background_for(entry);
        if background.is_empty() {
            let mut e = ApiError::new(409, "no_background", "bundle has no background rows for attribution");
            e.fields.push(FieldError::new(
                "task",
                format!("{} cannot be explained by this bundle", req.task),
            ));
            return Err(e);
        }
        let x = Self::encode(entry, &req.base.inputs)?;
        let units = if req.task.is_classification() {
            req.units
        } else {
            OutputUnits::Probability
        };
        let predictor = ModelOutput {
            model: &entry.model,
            units,
        };
        let attribution = shapley_sampling(&predictor, &background, &x, "request", req.n_permutations, req.seed)
            .map_err(ApiError::internal)?;
        Ok(ExplainResponse {
            schema_version: SCHEMA_VERSION,
            version: VERSION.into(),
            fingerprint: self.fingerprint.clone(),
            task: req.task,
            model_id: entry.id.clone(),
            units,
            attribution,
        })
    }
}
