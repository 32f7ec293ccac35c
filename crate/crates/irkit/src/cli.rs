//! `irkit` subcommands. Usage problems (bad flags, missing input files,
//! invalid request JSON) exit with status 2, runtime failures with 1; both
//! print a one-line JSON diagnostic on stderr.

use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use irkit_core::dataset::synth::{generate, SynthConfig};
use irkit_core::dataset::{
    apply_exclusions, derive_target, parse_csv, split, write_csv, ExclusionCriteria, Feature, FeatureMask,
    ParticipantRecord, Source, SplitConfig, SplitKind, TaskSpec,
};
use irkit_core::explain::{
    dependence_export, explain_instances, gain_importance, permutation_importance, sample_background, shap_importance,
    write_dependence_csv, write_importance_csv, write_shap_csv, ImportanceMetric, ModelOutput, OutputUnits,
    ShapleyConfig,
};
use irkit_core::harness::{
    classification_report, index_value, regression_report, run_experiment, Averaging, ExperimentConfig,
};
use irkit_core::indices::IndexKind;
use irkit_core::Model;
use serde_json::{json, Value};

use crate::api::{self, FieldError};
use crate::bundle::Bundle;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{message}")]
    Invalid { message: String, fields: Vec<FieldError> },
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Invalid { .. } => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn diagnostic(&self) -> Value {
        let kind = if self.exit_code() == 2 { "usage" } else { "runtime" };
        let mut d = json!({"level": "error", "kind": kind, "message": self.to_string()});
        if let CliError::Invalid { fields, .. } = self {
            d["fields"] = json!(fields);
        }
        d
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn existing(path: &Path) -> Result<&Path, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::Usage(format!(
            "{}: no such file or directory",
            path.display()
        )))
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SourceArg {
    Nhanes,
    Charls,
}

impl From<SourceArg> for Source {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Nhanes => Source::Nhanes,
            SourceArg::Charls => Source::Charls,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    All,
    Train,
    Val,
    Test,
    External,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum UnitsArg {
    Probability,
    Logit,
}

#[derive(Debug, Parser)]
#[command(
    name = "irkit",
    version,
    about = "Insulin-resistance prediction from routine measurements"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic participant CSV.
    Synth {
        #[arg(long, default_value_t = 5000)]
        n: usize,
        #[arg(long, value_enum, default_value = "nhanes")]
        source: SourceArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse and clean a survey extract; prints parse and exclusion tallies.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "nhanes")]
        source: SourceArg,
        /// Cleaned CSV.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "full")]
        mask: FeatureMask,
    },
    /// Assign participants to train/val/test (external rows stay external).
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "nhanes")]
        source: SourceArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Stratify by this task's label.
        #[arg(long)]
        stratify: Option<TaskSpec>,
        /// `id,split` manifest.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the experiment matrix from a TOML config; the output directory
    /// doubles as a serving bundle.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a saved model on a CSV; writes metrics.csv.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "nhanes")]
        source: SourceArg,
        /// Restrict to one split of the seeded assignment.
        #[arg(long, value_enum, default_value = "all")]
        split: SplitArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attributions and importances for a saved model.
    Explain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "nhanes")]
        source: SourceArg,
        /// Reference rows; defaults to a sample of `--data`.
        #[arg(long)]
        background: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 256)]
        permutations: usize,
        #[arg(long, default_value_t = 512)]
        background_size: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "probability")]
        units: UnitsArg,
        /// Features to export dependence points for (default: all used).
        #[arg(long, value_delimiter = ',')]
        dependence: Vec<Feature>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict for one participant given as request JSON.
    Predict {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, conflicts_with = "input", required_unless_present = "input")]
        json: Option<String>,
        #[arg(long)]
        input: Option<PathBuf>,
        /// Overrides the request's model selector.
        #[arg(long)]
        model: Option<String>,
    },
    /// Re-render report.md for a trained experiment (cached cells are reused).
    Report {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a bundle over HTTP.
    Serve {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
    /// Ground-truth HOMA-IR, TyG and METS-IR from laboratory values.
    Indices {
        #[arg(long)]
        fpg: Option<f64>,
        #[arg(long)]
        insulin: Option<f64>,
        #[arg(long)]
        tg: Option<f64>,
        #[arg(long)]
        hdl: Option<f64>,
        #[arg(long)]
        bmi: Option<f64>,
        /// Compute for every row of a CSV instead.
        #[arg(long, conflicts_with_all = ["fpg", "insulin", "tg", "hdl", "bmi"])]
        input: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "nhanes")]
        source: SourceArg,
        #[arg(long, requires = "input")]
        out: Option<PathBuf>,
    },
    /// Print the request/response schema document.
    Schema,
}

/// Parses arguments and runs, returning what would go to stdout.
pub fn invoke<I, T>(args: I) -> Result<String, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        // --help and --version
        Err(e) if e.exit_code() == 0 => return Ok(e.to_string()),
        Err(e) => return Err(CliError::Usage(e.to_string().trim_end().to_string())),
    };
    let mut stdout = String::new();
    run(cli.command, &mut stdout)?;
    Ok(stdout)
}

/// Process entry point; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match invoke(args) {
        Ok(stdout) => {
            print!("{stdout}");
            0
        }
        Err(e) => {
            eprintln!("{}", e.diagnostic());
            e.exit_code()
        }
    }
}

fn load_records(path: &Path, source: SourceArg) -> Result<Vec<ParticipantRecord>, CliError> {
    let (records, report) = parse_csv(existing(path)?, source.into()).map_err(runtime)?;
    for w in report.warnings.iter().take(20) {
        log::warn!("{w}");
    }
    Ok(records)
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    Model::load(existing(path)?).map_err(runtime)
}

/// Records usable by the model, with targets.
fn task_rows(model: &Model, records: &[ParticipantRecord]) -> (Vec<ParticipantRecord>, Vec<f64>) {
    let (kept, _) = apply_exclusions(records, &ExclusionCriteria::new(model.task, model.mask));
    let mut rows = Vec::with_capacity(kept.len());
    let mut targets = Vec::with_capacity(kept.len());
    for r in kept {
        if let Ok(t) = derive_target(&r, model.task) {
            targets.push(t.as_f64());
            rows.push(r);
        }
    }
    (rows, targets)
}

fn model_stem(path: &Path) -> String {
    path.file_stem().unwrap_or_default().to_string_lossy().into_owned()
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

pub fn run(cmd: Command, out: &mut String) -> Result<(), CliError> {
    match cmd {
        Command::Synth {
            n,
            source,
            seed,
            out: path,
        } => {
            let records = generate(&SynthConfig::new(n, source.into(), seed));
            write_csv(&path, &records, source.into()).map_err(runtime)?;
            let _ = writeln!(out, "wrote {} records to {}", records.len(), path.display());
        }
        Command::Ingest {
            input,
            source,
            out: path,
            mask,
        } => {
            let (records, report) = parse_csv(existing(&input)?, source.into()).map_err(runtime)?;
            write_csv(&path, &records, source.into()).map_err(runtime)?;
            let exclusions: Vec<Value> = TaskSpec::ALL
                .iter()
                .map(|t| json!(apply_exclusions(&records, &ExclusionCriteria::new(*t, mask)).1))
                .collect();
            let summary = json!({
                "rows_read": report.rows_read,
                "rows_kept": report.rows_kept,
                "rows_flagged": report.rows_flagged,
                "warnings": report.warnings,
                "exclusions": exclusions,
            });
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&summary).expect("json"));
        }
        Command::Split {
            input,
            source,
            seed,
            stratify,
            out: path,
        } => {
            let records = load_records(&input, source)?;
            let cfg = SplitConfig {
                stratify,
                ..SplitConfig::new(seed)
            };
            let a = split(&records, &cfg).map_err(runtime)?;
            a.write_manifest(&path).map_err(runtime)?;
            for kind in [SplitKind::Train, SplitKind::Val, SplitKind::Test, SplitKind::External] {
                let _ = writeln!(out, "{kind}\t{}", a.count(kind));
            }
        }
        Command::Train { config, out: dir } => {
            let cfg = ExperimentConfig::load(existing(&config)?).map_err(runtime)?;
            create_dir(&dir)?;
            let (records, warnings) = cfg.load_records().map_err(runtime)?;
            for w in warnings.iter().take(20) {
                log::warn!("{w}");
            }
            let result = run_experiment(&records, &cfg, Some(&dir)).map_err(runtime)?;
            write_text(&dir.join("config.toml"), &cfg.to_toml())?;
            let _ = writeln!(out, "task\tmodel\tstatus\tmodel_fingerprint");
            for c in &result.cells {
                let status = c.error.as_deref().map_or("ok".to_string(), |e| format!("failed: {e}"));
                let fp = c.model_fingerprint.as_deref().unwrap_or("-");
                let _ = writeln!(out, "{}\t{}\t{status}\t{fp}", c.task, c.model);
            }
            if result.cells.iter().all(|c| c.error.is_some()) {
                return Err(CliError::Runtime("every cell failed".into()));
            }
        }
        Command::Report { config, out: dir } => {
            let cfg = ExperimentConfig::load(existing(&config)?).map_err(runtime)?;
            existing(&dir)?;
            let (records, _) = cfg.load_records().map_err(runtime)?;
            run_experiment(&records, &cfg, Some(&dir)).map_err(runtime)?;
            let report = std::fs::read_to_string(dir.join("report.md")).map_err(runtime)?;
            out.push_str(&report);
        }
        Command::Eval {
            model,
            data,
            source,
            split: which,
            seed,
            out: dir,
        } => {
            let m = load_model(&model)?;
            let mut records = load_records(&data, source)?;
            if which != SplitArg::All {
                let a = split(&records, &SplitConfig::new(seed)).map_err(runtime)?;
                let want = match which {
                    SplitArg::Train => SplitKind::Train,
                    SplitArg::Val => SplitKind::Val,
                    SplitArg::Test => SplitKind::Test,
                    _ => SplitKind::External,
                };
                records.retain(|r| a.get(&r.id) == Some(want));
            }
            let (rows, targets) = task_rows(&m, &records);
            if rows.is_empty() {
                return Err(CliError::Runtime(format!("no usable rows for {}", m.task)));
            }
            let preds = m.predict_records(&rows).map_err(runtime)?;
            create_dir(&dir)?;
            let mut csv = String::from("task,model,n,auc,acc,f1,precision,recall,mae,rmse,r2,model_fingerprint\n");
            let line = if m.task.is_classification() {
                let labels: Vec<bool> = targets.iter().map(|t| *t > 0.5).collect();
                let c = classification_report(&preds, &labels, 0.5, Averaging::Binary).map_err(runtime)?;
                let _ = writeln!(
                    out,
                    "{} {} n={} AUC={:.4} ACC={:.4} F1={:.4} Precision={:.4} Recall={:.4}",
                    m.task,
                    m.kind,
                    rows.len(),
                    c.auc,
                    c.acc,
                    c.f1,
                    c.precision,
                    c.recall
                );
                format!(
                    "{:.6},{:.6},{:.6},{:.6},{:.6},,,",
                    c.auc, c.acc, c.f1, c.precision, c.recall
                )
            } else {
                let r = regression_report(&preds, &targets).map_err(runtime)?;
                let _ = writeln!(
                    out,
                    "{} {} n={} MAE={:.4} RMSE={:.4} R2={:.4}",
                    m.task,
                    m.kind,
                    rows.len(),
                    r.mae,
                    r.rmse,
                    r.r2
                );
                format!(",,,,,{:.6},{:.6},{:.6}", r.mae, r.rmse, r.r2)
            };
            let _ = writeln!(csv, "{},{},{},{line},{}", m.task, m.kind, rows.len(), m.fingerprint());
            write_text(&dir.join("metrics.csv"), &csv)?;
        }
        Command::Explain {
            model,
            data,
            source,
            background,
            instances,
            permutations,
            background_size,
            repeats,
            seed,
            units,
            dependence,
            out: dir,
        } => {
            let m = load_model(&model)?;
            let records = load_records(&data, source)?;
            let (rows, targets) = task_rows(&m, &records);
            if rows.is_empty() {
                return Err(CliError::Runtime(format!("no usable rows for {}", m.task)));
            }
            let vectors = m.encode(&rows).map_err(runtime)?;
            let reference = match &background {
                Some(p) => load_records(p, SourceArg::Nhanes)?
                    .iter()
                    .filter_map(|r| m.encoder.encode_masked(r, m.mask).ok())
                    .collect(),
                None => vectors.clone(),
            };
            let reference = sample_background(&reference, background_size, seed);
            let units = match units {
                UnitsArg::Probability => OutputUnits::Probability,
                UnitsArg::Logit => OutputUnits::Logit,
            };
            let predictor = ModelOutput { model: &m, units };
            let picked = sample_background(&vectors, instances, seed ^ 1);
            let cases: Vec<(String, _)> = picked
                .iter()
                .enumerate()
                .map(|(i, v)| (format!("row{i}"), *v))
                .collect();
            let cfg = ShapleyConfig {
                n_permutations: permutations,
                background_size,
                seed,
            };
            let attributions = explain_instances(&predictor, &reference, &cases, &cfg).map_err(runtime)?;

            let metric = if m.task.is_classification() {
                ImportanceMetric::Auc
            } else {
                ImportanceMetric::Rmse
            };
            let mut reports =
                vec![permutation_importance(&m, &vectors, &targets, metric, repeats, seed).map_err(runtime)?];
            if m.kind.is_tree() {
                reports.push(gain_importance(&m).map_err(runtime)?);
            }
            reports.push(shap_importance(&attributions).map_err(runtime)?);

            create_dir(&dir)?;
            let stem = model_stem(&model);
            write_importance_csv(&reports, dir.join(format!("importance_{stem}.csv"))).map_err(runtime)?;
            write_shap_csv(&attributions, dir.join(format!("shap_{stem}.csv"))).map_err(runtime)?;
            let features = if dependence.is_empty() {
                m.mask.features()
            } else {
                dependence
            };
            for f in features {
                let points = dependence_export(&attributions, &picked, f).map_err(runtime)?;
                write_dependence_csv(&points, dir.join(format!("dependence_{f}.csv"))).map_err(runtime)?;
            }
            for r in &reports {
                let ranked: Vec<String> = r
                    .ranked()
                    .iter()
                    .map(|s| format!("{}={:.4}", s.feature, s.score))
                    .collect();
                let _ = writeln!(out, "{}: {}", r.method.name(), ranked.join(" "));
            }
        }
        Command::Predict {
            bundle,
            json,
            input,
            model,
        } => {
            let b = Bundle::load(existing(&bundle)?).map_err(runtime)?;
            let text = match (json, input) {
                (Some(j), _) => j,
                (None, Some(p)) => std::fs::read_to_string(existing(&p)?).map_err(runtime)?,
                (None, None) => unreachable!("clap requires one of --json/--input"),
            };
            let mut v: Value =
                serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("request is not valid JSON: {e}")))?;
            if let (Some(m), Some(o)) = (model, v.as_object_mut()) {
                o.insert("model".into(), Value::String(m));
            }
            let req = api::parse_predict(&v).map_err(|fields| CliError::Invalid {
                message: "request failed validation".into(),
                fields,
            })?;
            let resp = b.predict(&req).map_err(|e| {
                if e.status == 500 {
                    CliError::Runtime(e.message)
                } else {
                    CliError::Invalid {
                        message: e.message,
                        fields: e.fields,
                    }
                }
            })?;
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&resp).expect("json"));
        }
        Command::Serve { bundle, host, port } => {
            let b = Arc::new(Bundle::load(existing(&bundle)?).map_err(runtime)?);
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| CliError::Usage(format!("bad address {host}:{port}: {e}")))?;
            let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
            rt.block_on(crate::service::serve(b, addr)).map_err(runtime)?;
        }
        Command::Indices {
            fpg,
            insulin,
            tg,
            hdl,
            bmi,
            input,
            source,
            out: path,
        } => match input {
            Some(input) => {
                let records = load_records(&input, source)?;
                let mut csv = String::from("id,homa_ir,homa_ir_positive,tyg,tyg_positive,mets_ir,mets_ir_positive\n");
                for r in &records {
                    let _ = write!(csv, "{}", r.id);
                    for kind in IndexKind::ALL {
                        match index_value(r, kind) {
                            Some(v) => {
                                let _ = write!(csv, ",{v:.6},{}", v > kind.threshold());
                            }
                            None => csv.push_str(",,"),
                        }
                    }
                    csv.push('\n');
                }
                match path {
                    Some(p) => write_text(&p, &csv)?,
                    None => out.push_str(&csv),
                }
            }
            None => {
                let rec = ParticipantRecord {
                    fpg,
                    insulin,
                    tg,
                    hdl,
                    bmi,
                    ..ParticipantRecord::empty("cli", Source::Nhanes)
                };
                let mut result = serde_json::Map::new();
                for kind in IndexKind::ALL {
                    if let Some(v) = index_value(&rec, kind) {
                        result.insert(
                            kind.name().to_string(),
                            json!({"value": v, "threshold": kind.threshold(), "positive": v > kind.threshold()}),
                        );
                    }
                }
                if result.is_empty() {
                    return Err(CliError::Usage(
                        "no index computable: give --fpg with --insulin, --tg, or --tg --hdl --bmi".into(),
                    ));
                }
                let _ = writeln!(
                    out,
                    "{}",
                    serde_json::to_string_pretty(&Value::Object(result)).expect("json")
                );
            }
        },
        Command::Schema => {
            let _ = writeln!(
                out,
                "{}",
                serde_json::to_string_pretty(&api::api_schema()).expect("json")
            );
        }
    }
    Ok(())
}
