use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::group::{group_summary, GroupSummary, Grouping};
use super::metrics::{
    classification_report, regression_report, roc_points, Averaging, ClassificationMetrics, RegressionMetrics,
};
use super::report::{render_report, write_curves, write_metrics_csv};
use super::train::{prepare_task, train, History, SplitData, TaskData, TrainConfig};
use super::HarnessError;
use crate::dataset::{split, write_csv, ParticipantRecord, Source, SplitConfig, TaskSpec};
use crate::model::{Model, ModelKind};
use crate::numcore::Rng;
use crate::par;

const CELL_CACHE_VERSION: &str = "irkit-cell-v1";
pub const BACKGROUND_ROWS: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    /// `test` (internal) or `external`.
    pub split: String,
    pub n: usize,
    pub classification: Option<ClassificationMetrics>,
    pub regression: Option<RegressionMetrics>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub split: String,
    pub ids: Vec<String>,
    pub targets: Vec<f64>,
    pub predictions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub task: TaskSpec,
    pub model: ModelKind,
    /// Hash of the cell's training config and the task's data.
    pub fingerprint: String,
    pub model_fingerprint: Option<String>,
    pub metrics: Vec<SplitMetrics>,
    /// Set when the task has no external labels although external records
    /// were supplied.
    pub external_unavailable: Option<String>,
    pub roc: Vec<(String, Vec<(f64, f64)>)>,
    pub predictions: Vec<Predictions>,
    /// Per-race metrics on the internal test split.
    pub groups: Option<GroupSummary>,
    pub history: History,
    pub wall_secs: f64,
    pub error: Option<String>,
    #[serde(skip)]
    pub cached: bool,
    #[serde(skip)]
    pub trained: Option<Model>,
}

impl CellResult {
    pub fn split(&self, name: &str) -> Option<&SplitMetrics> {
        self.metrics.iter().find(|m| m.split == name)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub cells: Vec<CellResult>,
    /// Cohort characteristics by the task's threshold strata
    /// (classification tasks) over the internal splits.
    pub characteristics: BTreeMap<TaskSpec, GroupSummary>,
    pub data_fingerprints: BTreeMap<TaskSpec, String>,
    pub external_supplied: bool,
    pub warnings: Vec<String>,
}

impl ExperimentResult {
    pub fn cell(&self, task: TaskSpec, model: ModelKind) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.task == task && c.model == model)
    }
}

fn hash_json<T: Serialize>(h: &mut Sha256, label: &str, value: &T) {
    h.update(label.as_bytes());
    h.update(serde_json::to_vec(value).expect("serializable"));
}

/// Hash of a prepared task's records and targets, split by split.
pub fn data_fingerprint(data: &TaskData) -> String {
    let mut h = Sha256::new();
    hash_json(&mut h, "task", &data.task);
    hash_json(&mut h, "mask", &data.mask);
    let external = data.external.clone().unwrap_or_default();
    for (name, s) in [
        ("train", &data.train),
        ("val", &data.val),
        ("test", &data.test),
        ("external", &external),
    ] {
        hash_json(&mut h, name, &s.records);
        hash_json(&mut h, name, &s.targets);
    }
    hex::encode(h.finalize())
}

/// Hash of a training config together with a data fingerprint; changes
/// iff either does.
pub fn fingerprint(cfg: &TrainConfig, data_fingerprint: &str) -> String {
    let mut h = Sha256::new();
    h.update(CELL_CACHE_VERSION.as_bytes());
    hash_json(&mut h, "config", cfg);
    h.update(data_fingerprint.as_bytes());
    hex::encode(h.finalize())
}

fn evaluate_split(
    name: &str,
    model: &Model,
    data: &SplitData,
) -> Result<(SplitMetrics, Option<Vec<(f64, f64)>>, Predictions), HarnessError> {
    let preds = model.predict(&data.vectors)?;
    let mut m = SplitMetrics {
        split: name.into(),
        n: data.len(),
        classification: None,
        regression: None,
        note: None,
    };
    let mut roc = None;
    if model.task.is_classification() {
        let labels = data.labels();
        match classification_report(&preds, &labels, 0.5, Averaging::Binary) {
            Ok(c) => {
                m.classification = Some(c);
                roc = Some(roc_points(&preds, &labels)?);
            }
            Err(e) => m.note = Some(e.to_string()),
        }
    } else {
        match regression_report(&preds, &data.targets) {
            Ok(r) => m.regression = Some(r),
            Err(e) => m.note = Some(e.to_string()),
        }
    }
    let p = Predictions {
        split: name.into(),
        ids: data.records.iter().map(|r| r.id.clone()).collect(),
        targets: data.targets.clone(),
        predictions: preds,
    };
    Ok((m, roc, p))
}

fn run_cell(
    data: &TaskData,
    cfg: &TrainConfig,
    fp: String,
    external_supplied: bool,
) -> Result<CellResult, HarnessError> {
    let start = Instant::now();
    let (model, history) = train(data, cfg)?;
    let mut cell = CellResult {
        task: cfg.task,
        model: cfg.model,
        fingerprint: fp,
        model_fingerprint: Some(model.fingerprint()),
        metrics: Vec::new(),
        external_unavailable: None,
        roc: Vec::new(),
        predictions: Vec::new(),
        groups: None,
        history,
        wall_secs: 0.0,
        error: None,
        cached: false,
        trained: None,
    };
    let mut splits = vec![("test", &data.test)];
    if let Some(ext) = &data.external {
        splits.push(("external", ext));
    } else if external_supplied && !cfg.task.externally_available() {
        cell.external_unavailable = Some("external cohort has no plasma insulin".into());
    }
    for (name, s) in splits {
        if s.is_empty() {
            continue;
        }
        let (m, roc, p) = evaluate_split(name, &model, s)?;
        if name == "test" {
            cell.groups = Some(group_summary(
                &s.records,
                Grouping::Race,
                Some((cfg.task, &p.predictions, &s.targets)),
            )?);
        }
        cell.metrics.push(m);
        if let Some(r) = roc {
            cell.roc.push((name.into(), r));
        }
        cell.predictions.push(p);
    }
    cell.wall_secs = start.elapsed().as_secs_f64();
    cell.trained = Some(model);
    Ok(cell)
}

fn failed(task: TaskSpec, model: ModelKind, fp: String, e: &HarnessError) -> CellResult {
    CellResult {
        task,
        model,
        fingerprint: fp,
        model_fingerprint: None,
        metrics: Vec::new(),
        external_unavailable: None,
        roc: Vec::new(),
        predictions: Vec::new(),
        groups: None,
        history: History::default(),
        wall_secs: 0.0,
        error: Some(e.to_string()),
        cached: false,
        trained: None,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    std::fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

fn cached_cell(dir: &Path, fp: &str) -> Option<CellResult> {
    let text = std::fs::read(dir.join("cache").join(format!("{fp}.json"))).ok()?;
    let mut cell: CellResult = serde_json::from_slice(&text).ok()?;
    cell.cached = true;
    Some(cell)
}

/// Up to [`BACKGROUND_ROWS`] training participants with laboratory values
/// stripped, kept next to the models as the attribution reference set.
fn write_background(train: &[ParticipantRecord], seed: u64, path: &Path) -> Result<(), HarnessError> {
    let mut idx = Rng::new(seed).fork(0xb9).permutation(train.len());
    idx.truncate(BACKGROUND_ROWS);
    idx.sort_unstable();
    let rows: Vec<ParticipantRecord> = idx
        .into_iter()
        .map(|i| ParticipantRecord {
            insulin: None,
            tg: None,
            hdl: None,
            ..train[i].clone()
        })
        .collect();
    write_csv(path, &rows, Source::Nhanes)?;
    Ok(())
}

/// Trains and evaluates every task × model cell. A failing cell is
/// recorded and the matrix continues. With `out_dir`, writes
/// `metrics.csv`, ROC and scatter CSVs, `report.md`, model files,
/// `background.csv` and a result cache keyed by cell fingerprint.
pub fn run_experiment(
    records: &[ParticipantRecord],
    cfg: &ExperimentConfig,
    out_dir: Option<&Path>,
) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    if let Some(dir) = out_dir {
        for sub in ["", "cache", "models"] {
            std::fs::create_dir_all(dir.join(sub)).map_err(|e| HarnessError::io(dir.join(sub), e))?;
        }
    }
    let assignment = split(records, &SplitConfig::new(cfg.seed))?;
    let splits = assignment.partition(records);
    let external_supplied = !splits.external.is_empty();

    let mut warnings = Vec::new();
    let mut prepared = BTreeMap::new();
    let mut characteristics = BTreeMap::new();
    let mut data_fingerprints = BTreeMap::new();
    for task in &cfg.tasks {
        match prepare_task(&splits, *task, cfg.mask) {
            Ok(d) => {
                data_fingerprints.insert(*task, data_fingerprint(&d));
                if let Some(kind) = task.is_classification().then(|| task.index_kind()) {
                    let internal: Vec<ParticipantRecord> = [&d.train, &d.val, &d.test]
                        .iter()
                        .flat_map(|s| s.records.iter().cloned())
                        .collect();
                    characteristics.insert(*task, group_summary(&internal, Grouping::Threshold(kind), None)?);
                }
                prepared.insert(*task, d);
            }
            Err(e) => warnings.push(format!("task {task}: {e}")),
        }
    }

    let cells: Vec<(TaskSpec, ModelKind)> = cfg
        .tasks
        .iter()
        .flat_map(|t| cfg.models.iter().map(move |m| (*t, *m)))
        .collect();
    let results = par::map_slice(&cells, |&(task, model)| {
        let tc = cfg.cell_config(task, model);
        let Some(data) = prepared.get(&task) else {
            let e = HarnessError::Config(format!("task {task} could not be prepared"));
            return failed(task, model, String::new(), &e);
        };
        let fp = fingerprint(&tc, &data_fingerprints[&task]);
        if let Some(cell) = out_dir.and_then(|d| cached_cell(d, &fp)) {
            log::info!("{task}/{model}: reusing cached result {fp}");
            return cell;
        }
        log::info!("{task}/{model}: training");
        match run_cell(data, &tc, fp.clone(), external_supplied) {
            Ok(cell) => cell,
            Err(e) => {
                log::warn!("{task}/{model} failed: {e}");
                failed(task, model, fp, &e)
            }
        }
    });

    let result = ExperimentResult {
        cells: results,
        characteristics,
        data_fingerprints,
        external_supplied,
        warnings,
    };
    if let Some(dir) = out_dir {
        for cell in result.cells.iter().filter(|c| !c.cached && c.error.is_none()) {
            if let Some(m) = &cell.trained {
                m.save(dir.join("models").join(format!("{}_{}.irkm", cell.task, cell.model)))?;
            }
            let json = serde_json::to_vec_pretty(cell).expect("serializable");
            write_file(&dir.join("cache").join(format!("{}.json", cell.fingerprint)), &json)?;
        }
        write_background(&splits.train, cfg.seed, &dir.join("background.csv"))?;
        write_metrics_csv(&result, dir.join("metrics.csv"))?;
        write_curves(&result, dir)?;
        write_file(&dir.join("report.md"), render_report(&result).as_bytes())?;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::{generate, SynthConfig};
    use crate::dataset::Source;

    fn small_config(models: Vec<ModelKind>, tasks: Vec<TaskSpec>) -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            seed: 5,
            tasks,
            models,
            ..ExperimentConfig::default()
        };
        cfg.train.max_epochs = 2;
        cfg.train.net.dim = 8;
        cfg.train.net.heads = 2;
        cfg.train.net.layers = 1;
        cfg.train.gbdt = None;
        cfg.train.forest.n_trees = 10;
        cfg
    }

    fn cohort(external: bool) -> Vec<ParticipantRecord> {
        let mut r = generate(&SynthConfig::new(400, Source::Nhanes, 3));
        if external {
            r.extend(generate(&SynthConfig::new(150, Source::Charls, 4)));
        }
        r
    }

    #[test]
    fn one_by_one_matrix_gives_one_row() {
        let cfg = small_config(vec![ModelKind::RandomForest], vec![TaskSpec::MetsClass]);
        let dir = tempfile::tempdir().unwrap();
        let res = run_experiment(&cohort(false), &cfg, Some(dir.path())).unwrap();
        assert_eq!(res.cells.len(), 1);
        let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(csv.lines().count(), 2, "{csv}");
        assert!(dir.path().join("roc_mets_class_random_forest.csv").exists());
        assert!(dir.path().join("report.md").exists());
        assert!(dir.path().join("models/mets_class_random_forest.irkm").exists());
    }

    #[test]
    fn homa_external_marked_unavailable() {
        let cfg = small_config(vec![ModelKind::Linear], vec![TaskSpec::HomaClass, TaskSpec::TygClass]);
        let res = run_experiment(&cohort(true), &cfg, None).unwrap();
        let homa = res.cell(TaskSpec::HomaClass, ModelKind::Linear).unwrap();
        assert!(homa.external_unavailable.is_some());
        assert!(homa.split("external").is_none());
        let tyg = res.cell(TaskSpec::TygClass, ModelKind::Linear).unwrap();
        assert!(tyg.split("external").is_some());
        let report = render_report(&res);
        assert!(report.contains("unavailable"));
    }

    #[test]
    fn identical_fingerprints_reuse_cache() {
        let cfg = small_config(vec![ModelKind::Xgboost], vec![TaskSpec::MetsRegress]);
        let dir = tempfile::tempdir().unwrap();
        let a = run_experiment(&cohort(false), &cfg, Some(dir.path())).unwrap();
        let csv_a = std::fs::read(dir.path().join("metrics.csv")).unwrap();
        let b = run_experiment(&cohort(false), &cfg, Some(dir.path())).unwrap();
        assert!(!a.cells[0].cached && b.cells[0].cached);
        assert_eq!(a.cells[0].metrics, b.cells[0].metrics);
        assert_eq!(csv_a, std::fs::read(dir.path().join("metrics.csv")).unwrap());
    }

    #[test]
    fn fingerprint_tracks_config_and_data() {
        let recs = cohort(false);
        let cfg = small_config(vec![ModelKind::Mlp], vec![TaskSpec::MetsClass]);
        let splits = split(&recs, &SplitConfig::new(1)).unwrap().partition(&recs);
        let d = prepare_task(&splits, TaskSpec::MetsClass, cfg.mask).unwrap();
        let dfp = data_fingerprint(&d);
        let tc = cfg.cell_config(TaskSpec::MetsClass, ModelKind::Mlp);
        let base = fingerprint(&tc, &dfp);
        assert_eq!(base, fingerprint(&tc.clone(), &data_fingerprint(&d.clone())));
        let mut other = tc.clone();
        other.max_epochs += 1;
        assert_ne!(base, fingerprint(&other, &dfp));
        let mut d2 = d.clone();
        d2.test.records[0].waist = d2.test.records[0].waist.map(|w| w + 1.0);
        assert_ne!(base, fingerprint(&tc, &data_fingerprint(&d2)));
    }

    #[test]
    fn failing_cell_does_not_stop_matrix() {
        let mut cfg = small_config(
            vec![ModelKind::Linear, ModelKind::RandomForest],
            vec![TaskSpec::MetsRegress],
        );
        cfg.train.optimizer = Some(crate::harness::OptimizerConfig::sgd(1e12));
        cfg.train.max_epochs = 30;
        let res = run_experiment(&cohort(false), &cfg, None).unwrap();
        let lin = res.cell(TaskSpec::MetsRegress, ModelKind::Linear).unwrap();
        assert!(lin.error.is_some(), "{:?}", lin.metrics);
        let rf = res.cell(TaskSpec::MetsRegress, ModelKind::RandomForest).unwrap();
        assert!(rf.error.is_none() && rf.split("test").is_some());
    }
}
