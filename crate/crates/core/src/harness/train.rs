use serde::{Deserialize, Serialize};

use super::metrics::auc;
use super::optim::{Optimizer, OptimizerConfig};
use super::HarnessError;
use crate::dataset::{
    apply_exclusions, derive_target, ExclusionCriteria, ExclusionReport, FeatureEncoder, FeatureMask, FeatureVector,
    ParticipantRecord, Splits, TaskSpec,
};
use crate::model::{Model, ModelBody, ModelKind};
use crate::nets::{Batch, HeadKind, Mode, NetConfig, NetError, NetModel};
use crate::numcore::{Rng, Tape};
use crate::trees::{fit_forest, fit_gbdt, Binning, CatMode, ForestConfig, GbdtConfig, Loss, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    MeanSquaredError,
}

impl LossKind {
    pub fn for_task(task: TaskSpec) -> Self {
        if task.is_classification() {
            LossKind::CrossEntropy
        } else {
            LossKind::MeanSquaredError
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub task: TaskSpec,
    pub model: ModelKind,
    /// `None` selects AdamW(1e-3) for classification and SGD(1e-4) for
    /// regression.
    pub optimizer: Option<OptimizerConfig>,
    /// Must match the task when given.
    pub loss: Option<LossKind>,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub mask: FeatureMask,
    pub net: NetConfig,
    /// Overrides the per-kind boosting preset.
    pub gbdt: Option<GbdtConfig>,
    pub forest: ForestConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: TaskSpec::MetsClass,
            model: ModelKind::Catboost,
            optimizer: None,
            loss: None,
            batch_size: 256,
            max_epochs: 500,
            patience: 20,
            seed: 0,
            mask: FeatureMask::full(),
            net: NetConfig::default(),
            gbdt: None,
            forest: ForestConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn new(task: TaskSpec, model: ModelKind) -> Self {
        Self {
            task,
            model,
            ..Self::default()
        }
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        self.optimizer.unwrap_or(if self.task.is_classification() {
            OptimizerConfig::adamw(1e-3)
        } else {
            OptimizerConfig::sgd(1e-4)
        })
    }

    pub fn loss(&self) -> LossKind {
        LossKind::for_task(self.task)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if let Some(l) = self.loss {
            if l != LossKind::for_task(self.task) {
                return Err(HarnessError::Config(format!(
                    "task {} trains with {:?}, not {l:?}",
                    self.task,
                    LossKind::for_task(self.task)
                )));
            }
        }
        if self.batch_size == 0 {
            return Err(HarnessError::Config("batch_size must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(HarnessError::Config("max_epochs must be positive".into()));
        }
        self.optimizer().validate()?;
        self.net.validate()?;
        Ok(())
    }

    /// Boosting settings: the override if present, else the preset for the
    /// model kind with the task's loss and this config's seed.
    pub fn gbdt_config(&self) -> GbdtConfig {
        let mut g = self.gbdt.unwrap_or_else(|| match self.model {
            ModelKind::Xgboost => GbdtConfig {
                learning_rate: 0.1,
                lambda: 1.0,
                min_leaf: 1,
                cat_mode: CatMode::OneHot,
                binning: Binning::Histogram(256),
                ..GbdtConfig::default()
            },
            _ => GbdtConfig {
                learning_rate: 0.03,
                lambda: 3.0,
                min_leaf: 1,
                cat_mode: CatMode::OrderedTarget,
                binning: Binning::Histogram(254),
                ..GbdtConfig::default()
            },
        });
        g.loss = if self.task.is_classification() {
            Loss::Logistic
        } else {
            Loss::Squared
        };
        g.seed = self.seed;
        g
    }
}

/// Records, encoded inputs and targets for one split of one task.
#[derive(Debug, Clone, Default)]
pub struct SplitData {
    pub records: Vec<ParticipantRecord>,
    pub vectors: Vec<FeatureVector>,
    pub targets: Vec<f64>,
}

impl SplitData {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.targets.iter().map(|t| *t > 0.5).collect()
    }
}

#[derive(Debug, Clone)]
pub struct TaskData {
    pub task: TaskSpec,
    pub mask: FeatureMask,
    pub encoder: FeatureEncoder,
    pub train: SplitData,
    pub val: SplitData,
    pub test: SplitData,
    /// Absent when no external records survive or the task has no
    /// external labels.
    pub external: Option<SplitData>,
    pub exclusions: ExclusionReport,
}

fn filter_split(
    records: &[ParticipantRecord],
    criteria: &ExclusionCriteria,
) -> Result<(Vec<ParticipantRecord>, ExclusionReport, Vec<f64>), HarnessError> {
    let (kept, report) = apply_exclusions(records, criteria);
    let targets = kept
        .iter()
        .map(|r| derive_target(r, criteria.task).map(|t| t.as_f64()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((kept, report, targets))
}

fn merge(total: &mut ExclusionReport, part: ExclusionReport) {
    total.total += part.total;
    total.kept += part.kept;
    for (k, v) in part.excluded {
        *total.excluded.entry(k).or_default() += v;
    }
}

/// Applies the task's exclusions within each split, derives targets and
/// fits the encoder on the training split.
pub fn prepare_task(splits: &Splits, task: TaskSpec, mask: FeatureMask) -> Result<TaskData, HarnessError> {
    let criteria = ExclusionCriteria::new(task, mask);
    let mut exclusions = ExclusionReport {
        task: Some(task),
        ..Default::default()
    };
    let mut parts = Vec::new();
    for recs in [&splits.train, &splits.val, &splits.test] {
        let (kept, report, targets) = filter_split(recs, &criteria)?;
        merge(&mut exclusions, report);
        parts.push((kept, targets));
    }
    let encoder = FeatureEncoder::fit(&parts[0].0, mask)?;
    let finish = |(records, targets): (Vec<ParticipantRecord>, Vec<f64>)| -> Result<SplitData, HarnessError> {
        let vectors = records
            .iter()
            .map(|r| encoder.encode_masked(r, mask))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SplitData {
            records,
            vectors,
            targets,
        })
    };
    let mut parts = parts.into_iter();
    let train = finish(parts.next().expect("train"))?;
    let val = finish(parts.next().expect("val"))?;
    let test = finish(parts.next().expect("test"))?;
    let external = if task.externally_available() && !splits.external.is_empty() {
        let (kept, report, targets) = filter_split(&splits.external, &criteria)?;
        merge(&mut exclusions, report);
        let ext = finish((kept, targets))?;
        (!ext.is_empty()).then_some(ext)
    } else {
        None
    };
    if val.is_empty() {
        return Err(HarnessError::Config(format!("task {task}: validation split is empty")));
    }
    Ok(TaskData {
        task,
        mask,
        encoder,
        train,
        val,
        test,
        external,
        exclusions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Selection metric: validation AUC or RMSE for nets, validation loss
    /// for boosting rounds.
    pub val_metric: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    /// One record per epoch, or per boosting round for tree ensembles.
    pub epochs: Vec<EpochRecord>,
    /// Epoch of the returned checkpoint (1-based; 0 for untrained).
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub warnings: Vec<String>,
}

/// Fits `cfg.model` on the training split, selecting on validation.
pub fn train(data: &TaskData, cfg: &TrainConfig) -> Result<(Model, History), HarnessError> {
    cfg.validate()?;
    if cfg.task != data.task || cfg.mask != data.mask {
        return Err(HarnessError::Config(format!(
            "config is for {} / {} but data was prepared for {} / {}",
            cfg.task, cfg.mask, data.task, data.mask
        )));
    }
    if data.train.is_empty() {
        return Err(HarnessError::Config("training split is empty".into()));
    }
    let (body, history) = match cfg.model {
        ModelKind::Xgboost | ModelKind::Catboost => {
            let t = Table::from_vectors(&data.train.vectors, data.mask);
            let v = Table::from_vectors(&data.val.vectors, data.mask);
            let m = fit_gbdt(
                &t,
                &data.train.targets,
                Some((&v, &data.val.targets)),
                &cfg.gbdt_config(),
            )?;
            let history = History {
                epochs: m
                    .train_loss
                    .iter()
                    .skip(1)
                    .zip(m.val_loss.iter().skip(1))
                    .enumerate()
                    .map(|(i, (tl, vl))| EpochRecord {
                        epoch: i + 1,
                        train_loss: *tl,
                        val_loss: *vl,
                        val_metric: *vl,
                    })
                    .collect(),
                best_epoch: m.trees.len(),
                stopped_early: m.trees.len() < cfg.gbdt_config().n_trees,
                warnings: m.warnings.clone(),
            };
            (ModelBody::Gbdt(m), history)
        }
        ModelKind::RandomForest => {
            let t = Table::from_vectors(&data.train.vectors, data.mask);
            let fc = ForestConfig {
                seed: cfg.seed,
                ..cfg.forest
            };
            (
                ModelBody::Forest(fit_forest(&t, &data.train.targets, &fc)?),
                History::default(),
            )
        }
        kind => {
            let net_kind = kind.net_kind().expect("neural kind");
            let head = if cfg.task.is_classification() {
                HeadKind::Classification
            } else {
                HeadKind::Regression
            };
            let net = NetConfig {
                seed: cfg.seed,
                ..cfg.net
            };
            let model = NetModel::for_encoder(net_kind, &data.encoder, data.mask, head, net)?;
            let (m, h) = train_net(
                model,
                &data.train.vectors,
                &data.train.targets,
                Some((&data.val.vectors, &data.val.targets)),
                cfg,
            )?;
            (ModelBody::Net(m), h)
        }
    };
    Ok((
        Model {
            kind: cfg.model,
            task: cfg.task,
            mask: data.mask,
            encoder: data.encoder.clone(),
            body,
        },
        history,
    ))
}

fn mean_std(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, if var > 0.0 { var.sqrt() } else { 1.0 })
}

fn divergence(epoch: usize, e: NetError) -> HarnessError {
    match e {
        NetError::NumericFault { layer } => HarnessError::Divergence {
            epoch,
            detail: format!("non-finite values in {layer}"),
        },
        other => other.into(),
    }
}

struct Evaluation {
    loss: f64,
    metric: f64,
}

/// Validation loss in training units and the selection metric: AUC for
/// classification (falls back to negative loss when single-class), RMSE
/// for regression.
fn evaluate(model: &NetModel, batch: &Batch, y: &[f64]) -> Result<Evaluation, NetError> {
    let preds = model.predict_batch(batch)?;
    let n = y.len() as f64;
    match model.head {
        HeadKind::Classification => {
            let loss = preds
                .iter()
                .zip(y)
                .map(|(p, t)| {
                    let q = if *t > 0.5 { *p } else { 1.0 - p };
                    -q.max(1e-300).ln()
                })
                .sum::<f64>()
                / n;
            let labels: Vec<bool> = y.iter().map(|t| *t > 0.5).collect();
            let metric = auc(&preds, &labels).unwrap_or(-loss);
            Ok(Evaluation { loss, metric })
        }
        HeadKind::Regression => {
            let sse: f64 = preds.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum();
            let z = model.target_std * model.target_std;
            Ok(Evaluation {
                loss: sse / n / z,
                metric: (sse / n).sqrt(),
            })
        }
    }
}

/// Minibatch training with early stopping; returns the best-validation
/// checkpoint.
pub fn train_net(
    mut model: NetModel,
    x: &[FeatureVector],
    y: &[f64],
    val: Option<(&[FeatureVector], &[f64])>,
    cfg: &TrainConfig,
) -> Result<(NetModel, History), HarnessError> {
    if x.len() != y.len() || x.is_empty() {
        return Err(HarnessError::Config(format!(
            "{} inputs for {} targets",
            x.len(),
            y.len()
        )));
    }
    let classification = model.head == HeadKind::Classification;
    if classification {
        if let Some(bad) = y.iter().find(|v| **v != 0.0 && **v != 1.0) {
            return Err(HarnessError::Config(format!(
                "classification targets must be 0/1, found {bad}"
            )));
        }
    } else {
        let (mean, std) = mean_std(y);
        model.target_mean = mean;
        model.target_std = std;
    }
    let batch = model.batch(x)?;
    let labels: Vec<usize> = y.iter().map(|v| *v as usize).collect();
    let z: Vec<f64> = y.iter().map(|v| (v - model.target_mean) / model.target_std).collect();
    let val = match val {
        Some((vx, vy)) if !vx.is_empty() => Some((model.batch(vx)?, vy)),
        _ => None,
    };

    let mut opt = Optimizer::new(cfg.optimizer(), &model.params);
    let mut order_rng = Rng::new(cfg.seed).fork(11);
    let mut dropout_rng = Rng::new(cfg.seed).fork(12);
    let mut history = History::default();
    let mut best: Option<(f64, NetModel)> = None;
    let mut since_best = 0usize;
    let higher_is_better = classification;

    for epoch in 1..=cfg.max_epochs {
        let order = order_rng.permutation(x.len());
        let mut loss_sum = 0.0;
        for rows in order.chunks(cfg.batch_size) {
            let b = batch.select(rows);
            let mut tape = Tape::new();
            let ids = model.params.bind(&mut tape);
            let out = model
                .forward(&mut tape, &ids, &b, Mode::Train(&mut dropout_rng))
                .map_err(|e| divergence(epoch, e))?;
            let loss = if classification {
                let l: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
                tape.softmax_cross_entropy(out, &l)
            } else {
                let t: Vec<f64> = rows.iter().map(|&r| z[r]).collect();
                tape.mse(out, &t)
            }
            .map_err(NetError::from)?;
            let value = tape.value(loss).get(0, 0);
            if !value.is_finite() {
                return Err(HarnessError::Divergence {
                    epoch,
                    detail: format!("training loss became {value}"),
                });
            }
            loss_sum += value * rows.len() as f64;
            let mut grads = tape.backward(loss).map_err(NetError::from)?;
            let g: Vec<_> = model
                .params
                .params
                .iter()
                .zip(&ids)
                .map(|(p, id)| (!p.frozen).then(|| grads.take(*id)))
                .collect();
            opt.step(&mut model.params, &g);
        }
        let train_loss = loss_sum / x.len() as f64;
        let (val_loss, val_metric) = match &val {
            Some((vb, vy)) => {
                let e = evaluate(&model, vb, vy).map_err(|e| divergence(epoch, e))?;
                (e.loss, e.metric)
            }
            None => (f64::NAN, if higher_is_better { -train_loss } else { train_loss }),
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_metric,
        });
        let improved = match &best {
            None => true,
            Some((b, _)) if higher_is_better => val_metric > *b,
            Some((b, _)) => val_metric < *b,
        };
        if improved {
            best = Some((val_metric, model.clone()));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }
        log::debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} metric {val_metric:.5}");
        if since_best >= cfg.patience && epoch < cfg.max_epochs {
            history.stopped_early = true;
            break;
        }
    }
    let (_, model) = best.expect("at least one epoch");
    Ok((model, history))
}
