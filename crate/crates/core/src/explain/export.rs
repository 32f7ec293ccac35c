use std::fmt::Write as _;
use std::path::Path;

use super::importance::ImportanceReport;
use super::shapley::{Attribution, DependencePoint};
use super::ExplainError;

fn write(path: &Path, text: String) -> Result<(), ExplainError> {
    std::fs::write(path, text).map_err(|source| ExplainError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// `importance_<model>.csv`: feature,score,rank,method; one block per report.
pub fn write_importance_csv(reports: &[ImportanceReport], path: impl AsRef<Path>) -> Result<(), ExplainError> {
    let mut out = String::from("feature,score,rank,method\n");
    for report in reports {
        for s in report.ranked() {
            let _ = writeln!(
                out,
                "{},{:.8},{},{}",
                s.feature.name(),
                s.score,
                s.rank,
                report.method.name()
            );
        }
    }
    write(path.as_ref(), out)
}

/// `shap_<model>.csv`: one row per instance and feature.
pub fn write_shap_csv(attributions: &[Attribution], path: impl AsRef<Path>) -> Result<(), ExplainError> {
    let mut out = String::from("id,feature,shap,std_error,base_value,prediction\n");
    for a in attributions {
        for ((f, v), se) in a.features.iter().zip(&a.values).zip(&a.std_errors) {
            let _ = writeln!(
                out,
                "{},{},{v:.8},{se:.8},{:.8},{:.8}",
                a.id,
                f.name(),
                a.base_value,
                a.prediction
            );
        }
    }
    write(path.as_ref(), out)
}

/// `dependence_<feature>.csv`: id,value,shap.
pub fn write_dependence_csv(points: &[DependencePoint], path: impl AsRef<Path>) -> Result<(), ExplainError> {
    let mut out = String::from("id,value,shap\n");
    for p in points {
        let _ = writeln!(out, "{},{:.6},{:.8}", p.id, p.value, p.shap);
    }
    write(path.as_ref(), out)
}
