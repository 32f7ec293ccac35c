use serde::{Deserialize, Serialize};

use super::metrics::{classification_report, regression_report, Averaging, ClassificationMetrics, RegressionMetrics};
use super::HarnessError;
use crate::dataset::{ParticipantRecord, Race, Sex, TaskSpec};
use crate::indices::{self, IndexKind, GLUCOSE_MGDL_PER_MMOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Race,
    /// `value ≤ threshold` vs `value > threshold` of one index.
    Threshold(IndexKind),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicRow {
    pub name: String,
    /// One cell per column: overall first, then each group.
    pub cells: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: String,
    pub n: usize,
    pub classification: Option<ClassificationMetrics>,
    pub regression: Option<RegressionMetrics>,
    /// Why metrics are missing, e.g. a single-class group.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub grouping: Grouping,
    /// Column headers: `overall` then non-empty groups.
    pub columns: Vec<String>,
    pub rows: Vec<CharacteristicRow>,
    pub metrics: Vec<GroupMetrics>,
    pub warnings: Vec<String>,
}

/// Index value of a record, `None` when inputs are missing or invalid.
pub fn index_value(rec: &ParticipantRecord, kind: IndexKind) -> Option<f64> {
    let fpg = rec.fpg?;
    let v = match kind {
        IndexKind::HomaIr => indices::homa_ir(fpg / GLUCOSE_MGDL_PER_MMOL, rec.insulin?),
        IndexKind::Tyg => indices::tyg(rec.tg?, fpg),
        IndexKind::MetsIr => indices::mets_ir(fpg, rec.tg?, rec.bmi?, rec.hdl?),
    };
    v.ok().map(|v| v.value)
}

fn mean_sd(values: &[f64]) -> String {
    if values.is_empty() {
        return "-".into();
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    format!("{mean:.2}±{sd:.2}")
}

fn count_pct(k: usize, n: usize) -> String {
    let pct = if n == 0 { 0.0 } else { 100.0 * k as f64 / n as f64 };
    format!("{k}({pct:.2}%)")
}

type Extract = fn(&ParticipantRecord) -> Option<f64>;

const NUMERIC_ROWS: [(&str, Extract); 13] = [
    ("Age", |r| r.age),
    ("Body mass index(kg/m²)", |r| r.bmi),
    ("Waist(cm)", |r| r.waist),
    ("Fasting plasma glucose(mg/dl)", |r| r.fpg),
    ("Plasma insulin level(uU/mL)", |r| r.insulin),
    ("Triglycerides(mg/dl)", |r| r.tg),
    ("HDL Cholesterol(mg/dl)", |r| r.hdl),
    ("Systolic(mm Hg)", |r| r.systolic),
    ("Diastolic(mm Hg)", |r| r.diastolic),
    ("Pulse(60 sec.)", |r| r.pulse),
    ("HOMA-IR", |r| index_value(r, IndexKind::HomaIr)),
    ("TyG", |r| index_value(r, IndexKind::Tyg)),
    ("METS-IR", |r| index_value(r, IndexKind::MetsIr)),
];

fn race_label(r: Race) -> &'static str {
    match r {
        Race::MexicanAmerican => "Mexican American",
        Race::OtherHispanic => "Other Hispanic",
        Race::NonHispanicWhite => "Non-Hispanic White",
        Race::NonHispanicBlack => "Non-Hispanic Black",
        Race::OtherMulti => "Other Race-Including Multi-Racial",
    }
}

fn characteristic_rows(columns: &[Vec<&ParticipantRecord>]) -> Vec<CharacteristicRow> {
    let mut rows = vec![CharacteristicRow {
        name: "Number of participants".into(),
        cells: columns.iter().map(|c| c.len().to_string()).collect(),
    }];
    let female = |c: &Vec<&ParticipantRecord>| c.iter().filter(|r| r.sex == Some(Sex::Female)).count();
    rows.push(CharacteristicRow {
        name: "Female".into(),
        cells: columns.iter().map(|c| count_pct(female(c), c.len())).collect(),
    });
    for (name, f) in NUMERIC_ROWS {
        let cells: Vec<String> = columns
            .iter()
            .map(|c| mean_sd(&c.iter().filter_map(|r| f(r)).collect::<Vec<_>>()))
            .collect();
        if cells.iter().any(|c| c != "-") {
            rows.push(CharacteristicRow {
                name: name.into(),
                cells,
            });
        }
    }
    for race in Race::ALL {
        rows.push(CharacteristicRow {
            name: race_label(race).into(),
            cells: columns
                .iter()
                .map(|c| count_pct(c.iter().filter(|r| r.race == Some(race)).count(), c.len()))
                .collect(),
        });
    }
    rows
}

fn group_metrics(
    group: String,
    rows: &[usize],
    task: TaskSpec,
    preds: &[f64],
    targets: &[f64],
    averaging: Averaging,
) -> GroupMetrics {
    let p: Vec<f64> = rows.iter().map(|&i| preds[i]).collect();
    let t: Vec<f64> = rows.iter().map(|&i| targets[i]).collect();
    let mut m = GroupMetrics {
        group,
        n: rows.len(),
        classification: None,
        regression: None,
        note: None,
    };
    if task.is_classification() {
        let labels: Vec<bool> = t.iter().map(|v| *v > 0.5).collect();
        match classification_report(&p, &labels, 0.5, averaging) {
            Ok(c) => m.classification = Some(c),
            Err(e) => m.note = Some(e.to_string()),
        }
    } else {
        match regression_report(&p, &t) {
            Ok(r) => m.regression = Some(r),
            Err(e) => m.note = Some(e.to_string()),
        }
    }
    m
}

/// Characteristic table and, when `predictions` (task, scores, targets
/// aligned with `records`) are given, per-group metrics. Empty groups are
/// omitted with a warning.
pub fn group_summary(
    records: &[ParticipantRecord],
    grouping: Grouping,
    predictions: Option<(TaskSpec, &[f64], &[f64])>,
) -> Result<GroupSummary, HarnessError> {
    if let Some((_, p, t)) = predictions {
        if p.len() != records.len() || t.len() != records.len() {
            return Err(HarnessError::Config(format!(
                "{} predictions and {} targets for {} records",
                p.len(),
                t.len(),
                records.len()
            )));
        }
    }
    let mut warnings = Vec::new();
    let mut groups: Vec<(String, Vec<usize>)> = match grouping {
        Grouping::Race => Race::ALL
            .iter()
            .map(|race| {
                let rows = (0..records.len()).filter(|&i| records[i].race == Some(*race)).collect();
                (race_label(*race).to_string(), rows)
            })
            .collect(),
        Grouping::Threshold(kind) => {
            let values: Vec<Option<f64>> = records.iter().map(|r| index_value(r, kind)).collect();
            let missing = values.iter().filter(|v| v.is_none()).count();
            if missing > 0 {
                warnings.push(format!(
                    "{missing} records lack {} inputs and are not stratified",
                    kind.name()
                ));
            }
            let thr = kind.threshold();
            let pick = |above: bool| -> Vec<usize> {
                (0..records.len())
                    .filter(|&i| values[i].is_some_and(|v| (v > thr) == above))
                    .collect()
            };
            vec![
                (format!("{}≤{thr}", kind.name()), pick(false)),
                (format!("{}>{thr}", kind.name()), pick(true)),
            ]
        }
    };
    groups.retain(|(name, rows)| {
        if rows.is_empty() {
            log::warn!("group `{name}` has no members; omitted");
            warnings.push(format!("group `{name}` has no members; omitted"));
        }
        !rows.is_empty()
    });

    let mut columns = vec!["overall".to_string()];
    let mut record_columns = vec![records.iter().collect::<Vec<_>>()];
    for (name, rows) in &groups {
        columns.push(name.clone());
        record_columns.push(rows.iter().map(|&i| &records[i]).collect());
    }
    let rows = characteristic_rows(&record_columns);

    let metrics = match predictions {
        Some((task, p, t)) => groups
            .iter()
            .map(|(name, rows)| group_metrics(name.clone(), rows, task, p, t, Averaging::Binary))
            .collect(),
        None => Vec::new(),
    };
    Ok(GroupSummary {
        grouping,
        columns,
        rows,
        metrics,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::{generate, SynthConfig};
    use crate::dataset::Source;

    fn cohort() -> Vec<ParticipantRecord> {
        generate(&SynthConfig::new(400, Source::Nhanes, 7))
    }

    #[test]
    fn single_group_equals_overall() {
        let mut recs = cohort();
        for r in &mut recs {
            r.race = Some(Race::NonHispanicWhite);
        }
        let p: Vec<f64> = recs.iter().map(|r| r.bmi.unwrap() / 60.0).collect();
        let t: Vec<f64> = recs
            .iter()
            .map(|r| f64::from(u8::from(index_value(r, IndexKind::MetsIr).unwrap() > 41.33)))
            .collect();
        let s = group_summary(&recs, Grouping::Race, Some((TaskSpec::MetsClass, &p, &t))).unwrap();
        assert_eq!(s.metrics.len(), 1);
        let labels: Vec<bool> = t.iter().map(|v| *v > 0.5).collect();
        let overall = classification_report(&p, &labels, 0.5, Averaging::Binary).unwrap();
        assert_eq!(s.metrics[0].classification.as_ref().unwrap(), &overall);
        assert_eq!(s.rows[0].cells[0], s.rows[0].cells[1]);
        assert_eq!(s.warnings.len(), 4);
    }

    #[test]
    fn threshold_strata_match_filtering() {
        let recs = cohort();
        let s = group_summary(&recs, Grouping::Threshold(IndexKind::MetsIr), None).unwrap();
        assert_eq!(s.columns, ["overall", "METS-IR≤41.33", "METS-IR>41.33"]);
        let above: Vec<&ParticipantRecord> = recs
            .iter()
            .filter(|r| index_value(r, IndexKind::MetsIr).unwrap() > 41.33)
            .collect();
        let n_rows = &s.rows[0].cells;
        assert_eq!(n_rows[2], above.len().to_string());
        assert_eq!(n_rows[1], (recs.len() - above.len()).to_string());
        let bmi = s.rows.iter().find(|r| r.name.starts_with("Body mass")).unwrap();
        let vals: Vec<f64> = above.iter().map(|r| r.bmi.unwrap()).collect();
        assert_eq!(bmi.cells[2], mean_sd(&vals));
        let names: Vec<&str> = s.rows.iter().map(|r| r.name.as_str()).collect();
        assert!(names.contains(&"METS-IR") && names.contains(&"Female") && names.contains(&"Non-Hispanic Black"));
    }

    #[test]
    fn empty_race_is_omitted() {
        let mut recs = cohort();
        recs.retain(|r| r.race != Some(Race::OtherHispanic));
        let s = group_summary(&recs, Grouping::Race, None).unwrap();
        assert!(!s.columns.iter().any(|c| c == "Other Hispanic"));
        assert!(s.warnings.iter().any(|w| w.contains("Other Hispanic")));
    }

    #[test]
    fn single_class_group_noted() {
        let recs: Vec<ParticipantRecord> = cohort().into_iter().take(20).collect();
        let p = vec![0.3; 20];
        let t = vec![1.0; 20];
        let s = group_summary(
            &recs,
            Grouping::Threshold(IndexKind::Tyg),
            Some((TaskSpec::TygClass, &p, &t)),
        )
        .unwrap();
        assert!(s.metrics.iter().all(|m| m.classification.is_none() && m.note.is_some()));
    }

    #[test]
    fn misaligned_predictions_rejected() {
        let recs = cohort();
        assert!(group_summary(&recs, Grouping::Race, Some((TaskSpec::MetsRegress, &[1.0], &[1.0]))).is_err());
    }
}
