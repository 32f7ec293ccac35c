use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DatasetError, Feature, FeatureMask, ParticipantRecord, TaskSpec};
use crate::indices::{self, GLUCOSE_MGDL_PER_MMOL};

/// Which records may enter a task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExclusionCriteria {
    pub task: TaskSpec,
    pub mask: FeatureMask,
    pub min_age: f64,
    pub glucose_mgdl_per_mmol: f64,
}

impl ExclusionCriteria {
    pub fn new(task: TaskSpec, mask: FeatureMask) -> Self {
        Self {
            task,
            mask,
            min_age: 18.0,
            glucose_mgdl_per_mmol: GLUCOSE_MGDL_PER_MMOL,
        }
    }
}

/// Exclusion tallies. Each excluded record is counted under the first
/// reason that applies, checked in the order: age, diabetes, missing
/// fields, implausible laboratory values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub task: Option<TaskSpec>,
    pub total: usize,
    pub kept: usize,
    pub excluded: BTreeMap<String, usize>,
}

impl ExclusionReport {
    pub fn count(&self, reason: &str) -> usize {
        self.excluded.get(reason).copied().unwrap_or(0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }
}

/// A prediction target: a thresholded label or a METS-IR value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Target {
    Class(bool),
    Value(f64),
}

impl Target {
    pub fn as_f64(self) -> f64 {
        match self {
            Target::Class(b) => f64::from(u8::from(b)),
            Target::Value(v) => v,
        }
    }
}

fn field(rec: &ParticipantRecord, name: &'static str) -> Result<f64, DatasetError> {
    let v = match name {
        "fpg" => rec.fpg,
        "insulin" => rec.insulin,
        "tg" => rec.tg,
        "hdl" => rec.hdl,
        "bmi" => rec.bmi,
        _ => None,
    };
    v.ok_or_else(|| DatasetError::MissingField {
        id: rec.id.clone(),
        field: name,
    })
}

/// Target for `task` using glucose conversion 18.0 mg/dL per mmol/L.
pub fn derive_target(rec: &ParticipantRecord, task: TaskSpec) -> Result<Target, DatasetError> {
    derive_target_with(rec, task, GLUCOSE_MGDL_PER_MMOL)
}

pub fn derive_target_with(
    rec: &ParticipantRecord,
    task: TaskSpec,
    glucose_mgdl_per_mmol: f64,
) -> Result<Target, DatasetError> {
    let idx = match task {
        TaskSpec::HomaClass => {
            let fpg = indices::glucose_mgdl_to_mmol_with(field(rec, "fpg")?, glucose_mgdl_per_mmol)?;
            indices::homa_ir(fpg, field(rec, "insulin")?)?
        }
        TaskSpec::TygClass => indices::tyg(field(rec, "tg")?, field(rec, "fpg")?)?,
        TaskSpec::MetsClass | TaskSpec::MetsRegress => indices::mets_ir(
            field(rec, "fpg")?,
            field(rec, "tg")?,
            field(rec, "bmi")?,
            field(rec, "hdl")?,
        )?,
    };
    Ok(match task {
        TaskSpec::MetsRegress => Target::Value(idx.value),
        _ => Target::Class(indices::classify(idx)?.positive),
    })
}

fn exclusion_reason(rec: &ParticipantRecord, c: &ExclusionCriteria) -> Option<String> {
    match rec.age {
        Some(a) if a < c.min_age => return Some("age".into()),
        None => return Some("missing_age".into()),
        _ => {}
    }
    match rec.diabetes {
        Some(true) => return Some("diabetes".into()),
        None => return Some("missing_diabetes".into()),
        _ => {}
    }
    for f in c.mask.features() {
        if !rec.has_feature(f) {
            return Some(format!("missing_{}", f.name()));
        }
    }
    for lab in c.task.required_labs() {
        if field(rec, lab).is_err() {
            return Some(format!("missing_{lab}"));
        }
    }
    match derive_target_with(rec, c.task, c.glucose_mgdl_per_mmol) {
        Ok(_) => None,
        Err(_) => Some("implausible_labs".into()),
    }
}

/// Drops under-age, diabetic and incomplete records for the task.
pub fn apply_exclusions(
    records: &[ParticipantRecord],
    criteria: &ExclusionCriteria,
) -> (Vec<ParticipantRecord>, ExclusionReport) {
    let mut report = ExclusionReport {
        task: Some(criteria.task),
        total: records.len(),
        ..Default::default()
    };
    let mut kept = Vec::with_capacity(records.len());
    for r in records {
        match exclusion_reason(r, criteria) {
            Some(reason) => *report.excluded.entry(reason).or_default() += 1,
            None => kept.push(r.clone()),
        }
    }
    report.kept = kept.len();
    debug_assert!(kept
        .iter()
        .all(|r| criteria.mask.features().iter().all(|f: &Feature| r.has_feature(*f))));
    (kept, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Race, Sex, Source};

    pub(crate) fn complete(id: &str) -> ParticipantRecord {
        ParticipantRecord {
            id: id.into(),
            age: Some(40.0),
            sex: Some(Sex::Male),
            race: Some(Race::NonHispanicWhite),
            height: Some(175.0),
            weight: Some(87.0),
            bmi: Some(28.41),
            waist: Some(98.0),
            pulse: Some(70.0),
            systolic: Some(120.0),
            diastolic: Some(75.0),
            fpg: Some(100.0),
            insulin: Some(11.25),
            tg: Some(117.0),
            hdl: Some(54.58),
            diabetes: Some(false),
            source: Source::Nhanes,
        }
    }

    #[test]
    fn minors_and_diabetics_are_excluded() {
        let mut minor = complete("a");
        minor.age = Some(17.0);
        let mut diab = complete("b");
        diab.diabetes = Some(true);
        let c = ExclusionCriteria::new(TaskSpec::MetsClass, FeatureMask::full());
        let (kept, rep) = apply_exclusions(&[minor, diab, complete("c")], &c);
        assert_eq!(kept.len(), 1);
        assert_eq!(rep.count("age"), 1);
        assert_eq!(rep.count("diabetes"), 1);
        assert_eq!(rep.total, 3);
    }

    #[test]
    fn charls_without_insulin_kept_for_mets() {
        let mut r = complete("c");
        r.source = Source::Charls;
        r.insulin = None;
        r.race = Some(Race::OtherMulti);
        let (kept, _) = apply_exclusions(
            std::slice::from_ref(&r),
            &ExclusionCriteria::new(TaskSpec::MetsClass, FeatureMask::full()),
        );
        assert_eq!(kept.len(), 1);
        let (kept, rep) = apply_exclusions(&[r], &ExclusionCriteria::new(TaskSpec::HomaClass, FeatureMask::full()));
        assert!(kept.is_empty());
        assert_eq!(rep.count("missing_insulin"), 1);
    }

    #[test]
    fn masked_out_features_may_be_missing() {
        let mut r = complete("x");
        r.waist = None;
        let full = ExclusionCriteria::new(TaskSpec::MetsClass, FeatureMask::full());
        let simple = ExclusionCriteria::new(TaskSpec::MetsClass, FeatureMask::simplified());
        assert_eq!(
            apply_exclusions(std::slice::from_ref(&r), &full)
                .1
                .count("missing_waist"),
            1
        );
        assert_eq!(apply_exclusions(&[r], &simple).0.len(), 1);
    }

    #[test]
    fn exclusions_are_idempotent() {
        let mut recs: Vec<_> = (0..20).map(|i| complete(&i.to_string())).collect();
        recs[3].age = Some(12.0);
        recs[7].hdl = None;
        recs[9].diabetes = Some(true);
        let c = ExclusionCriteria::new(TaskSpec::TygClass, FeatureMask::full());
        let (once, _) = apply_exclusions(&recs, &c);
        let (twice, rep) = apply_exclusions(&once, &c);
        assert_eq!(once, twice);
        assert!(rep.excluded.is_empty());
    }

    #[test]
    fn targets() {
        let r = complete("t");
        assert_eq!(derive_target(&r, TaskSpec::MetsClass).unwrap(), Target::Class(false));
        match derive_target(&r, TaskSpec::MetsRegress).unwrap() {
            Target::Value(v) => assert!((v - 40.91).abs() < 0.005),
            other => panic!("{other:?}"),
        }
        let mut h = complete("h");
        h.fpg = Some(90.0);
        h.insulin = Some(11.25);
        assert_eq!(derive_target(&h, TaskSpec::HomaClass).unwrap(), Target::Class(false));
        h.insulin = None;
        match derive_target(&h, TaskSpec::HomaClass) {
            Err(DatasetError::MissingField { field, .. }) => assert_eq!(field, "insulin"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn report_serializes_reason_counts() {
        let mut r = complete("a");
        r.age = Some(10.0);
        let (_, rep) = apply_exclusions(&[r], &ExclusionCriteria::new(TaskSpec::TygClass, FeatureMask::full()));
        let v: serde_json::Value = serde_json::from_str(&rep.to_json()).unwrap();
        assert_eq!(v["excluded"]["age"], 1);
        assert_eq!(v["kept"], 0);
    }
}
