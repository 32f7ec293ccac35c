use std::fmt::Write as _;
use std::path::Path;

use super::experiment::{CellResult, ExperimentResult, SplitMetrics};
use super::group::GroupSummary;
use super::HarnessError;
use crate::dataset::TaskSpec;

const METRIC_HEADER: &str =
    "task,model,split,n,auc,acc,f1,precision,recall,mae,rmse,r2,fingerprint,model_fingerprint,status";

fn num(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}

fn csv_row(cell: &CellResult, m: Option<&SplitMetrics>, status: &str) -> String {
    let c = m.and_then(|m| m.classification.as_ref());
    let r = m.and_then(|m| m.regression.as_ref());
    [
        cell.task.to_string(),
        cell.model.to_string(),
        m.map_or_else(String::new, |m| m.split.clone()),
        m.map_or_else(String::new, |m| m.n.to_string()),
        num(c.map(|c| c.auc)),
        num(c.map(|c| c.acc)),
        num(c.map(|c| c.f1)),
        num(c.map(|c| c.precision)),
        num(c.map(|c| c.recall)),
        num(r.map(|r| r.mae)),
        num(r.map(|r| r.rmse)),
        num(r.map(|r| r.r2)),
        cell.fingerprint.clone(),
        cell.model_fingerprint.clone().unwrap_or_default(),
        status.replace([',', '\n'], ";"),
    ]
    .join(",")
}

/// One row per cell and evaluated split; failed cells get one row with
/// the error as status. No timing columns, so reruns are byte-identical.
pub fn write_metrics_csv(result: &ExperimentResult, path: impl AsRef<Path>) -> Result<(), HarnessError> {
    let mut out = String::from(METRIC_HEADER);
    out.push('\n');
    for cell in &result.cells {
        if let Some(e) = &cell.error {
            out.push_str(&csv_row(cell, None, &format!("error: {e}")));
            out.push('\n');
            continue;
        }
        for m in &cell.metrics {
            out.push_str(&csv_row(cell, Some(m), m.note.as_deref().unwrap_or("ok")));
            out.push('\n');
        }
        if let Some(why) = &cell.external_unavailable {
            let m = SplitMetrics {
                split: "external".into(),
                n: 0,
                classification: None,
                regression: None,
                note: None,
            };
            out.push_str(&csv_row(cell, Some(&m), &format!("unavailable: {why}")));
            out.push('\n');
        }
    }
    std::fs::write(path.as_ref(), out).map_err(|e| HarnessError::io(path, e))
}

/// `roc_<task>_<model>.csv` (split,fpr,tpr) for classifiers and
/// `scatter_<task>_<model>.csv` (split,id,target,prediction) for regression.
pub fn write_curves(result: &ExperimentResult, dir: &Path) -> Result<(), HarnessError> {
    for cell in result.cells.iter().filter(|c| c.error.is_none()) {
        let stem = format!("{}_{}", cell.task, cell.model);
        if cell.task.is_classification() {
            let mut out = String::from("split,fpr,tpr\n");
            for (split, pts) in &cell.roc {
                for (f, t) in pts {
                    let _ = writeln!(out, "{split},{f:.6},{t:.6}");
                }
            }
            let path = dir.join(format!("roc_{stem}.csv"));
            std::fs::write(&path, out).map_err(|e| HarnessError::io(&path, e))?;
        } else {
            let mut out = String::from("split,id,target,prediction\n");
            for p in &cell.predictions {
                for ((id, t), y) in p.ids.iter().zip(&p.targets).zip(&p.predictions) {
                    let _ = writeln!(out, "{},{id},{t:.6},{y:.6}", p.split);
                }
            }
            let path = dir.join(format!("scatter_{stem}.csv"));
            std::fs::write(&path, out).map_err(|e| HarnessError::io(&path, e))?;
        }
    }
    Ok(())
}

fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

fn metric_cells(task: TaskSpec, m: Option<&SplitMetrics>) -> Vec<String> {
    let width = if task.is_classification() { 5 } else { 3 };
    match m {
        Some(m) => match (&m.classification, &m.regression) {
            (Some(c), _) => [c.auc, c.acc, c.f1, c.precision, c.recall].map(fmt4).to_vec(),
            (_, Some(r)) => [r.mae, r.rmse, r.r2].map(fmt4).to_vec(),
            _ => vec!["-".into(); width],
        },
        None => vec!["n/a".into(); width],
    }
}

fn table(out: &mut String, header: &[String], rows: &[Vec<String>]) {
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}|", vec!["---"; header.len()].join("|"));
    for r in rows {
        let _ = writeln!(out, "| {} |", r.join(" | "));
    }
    out.push('\n');
}

fn characteristics_table(out: &mut String, s: &GroupSummary) {
    let mut header = vec!["Characteristics".to_string()];
    header.extend(s.columns.iter().cloned());
    let rows: Vec<Vec<String>> = s
        .rows
        .iter()
        .map(|r| std::iter::once(r.name.clone()).chain(r.cells.iter().cloned()).collect())
        .collect();
    table(out, &header, &rows);
}

/// Markdown report: one metrics table per task (internal and, where
/// supplied, external columns), then cohort characteristics.
pub fn render_report(result: &ExperimentResult) -> String {
    let mut out = String::from("# Experiment report\n\n");
    let mut tasks: Vec<TaskSpec> = result.cells.iter().map(|c| c.task).collect();
    tasks.dedup();
    for task in tasks {
        let cells: Vec<&CellResult> = result.cells.iter().filter(|c| c.task == task).collect();
        let _ = writeln!(out, "## {task}\n");
        let names: &[&str] = if task.is_classification() {
            &["AUC", "ACC", "F1", "Precision", "Recall"]
        } else {
            &["MAE", "RMSE", "R2"]
        };
        let with_external = result.external_supplied;
        let mut header = vec!["Model".to_string()];
        header.extend(names.iter().map(|n| format!("{n} (internal)")));
        if with_external {
            header.extend(names.iter().map(|n| format!("{n} (external)")));
        }
        let mut notes = Vec::new();
        let rows: Vec<Vec<String>> = cells
            .iter()
            .map(|c| {
                let mut row = vec![c.model.display_name(task).to_string()];
                if let Some(e) = &c.error {
                    notes.push(format!("{}: failed ({e})", c.model.display_name(task)));
                    row.extend(vec!["failed".to_string(); header.len() - 1]);
                    return row;
                }
                row.extend(metric_cells(task, c.split("test")));
                if with_external {
                    row.extend(metric_cells(task, c.split("external")));
                }
                row
            })
            .collect();
        table(&mut out, &header, &rows);
        if let Some(why) = cells.iter().find_map(|c| c.external_unavailable.as_ref()) {
            let _ = writeln!(out, "External columns unavailable: {why}.\n");
        }
        for n in notes {
            let _ = writeln!(out, "- {n}");
        }
        if let Some(s) = result.characteristics.get(&task) {
            let _ = writeln!(out, "### Cohort characteristics\n");
            characteristics_table(&mut out, s);
        }
    }
    if !result.warnings.is_empty() {
        out.push_str("## Warnings\n\n");
        for w in &result.warnings {
            let _ = writeln!(out, "- {w}");
        }
    }
    out
}
