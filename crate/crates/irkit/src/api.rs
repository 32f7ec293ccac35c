//! JSON request and response types shared by the HTTP service and the
//! `predict` command. Requests are validated field by field so that every
//! rejection can name the offending input.

use std::collections::BTreeMap;

use irkit_core::dataset::{Feature, FeatureMask, ParticipantRecord, Race, Sex, Source, TaskSpec};
use irkit_core::explain::{Attribution, OutputUnits};
use irkit_core::ModelKind;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

pub const SCHEMA_VERSION: u32 = 1;
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MAX_SWEEP_POINTS: usize = 200;
pub const MAX_PERMUTATIONS: usize = 4096;
pub const DEFAULT_PERMUTATIONS: usize = 256;

/// Accepted range for a numeric input, inclusive, in its documented unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputRange {
    pub feature: Feature,
    pub min: f64,
    pub max: f64,
}

pub const RANGES: [InputRange; 7] = [
    InputRange {
        feature: Feature::Age,
        min: 18.0,
        max: 120.0,
    },
    InputRange {
        feature: Feature::Bmi,
        min: 10.0,
        max: 80.0,
    },
    InputRange {
        feature: Feature::Waist,
        min: 40.0,
        max: 220.0,
    },
    InputRange {
        feature: Feature::Pulse,
        min: 30.0,
        max: 220.0,
    },
    InputRange {
        feature: Feature::Systolic,
        min: 70.0,
        max: 260.0,
    },
    InputRange {
        feature: Feature::Diastolic,
        min: 30.0,
        max: 160.0,
    },
    InputRange {
        feature: Feature::Fpg,
        min: 30.0,
        max: 300.0,
    },
];

pub fn range_of(f: Feature) -> Option<InputRange> {
    RANGES.iter().copied().find(|r| r.feature == f)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

/// Validated inputs for one participant.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictRequest {
    pub inputs: ParticipantRecord,
    /// Features the caller supplied and wants used.
    pub mask: FeatureMask,
    /// Model kind name or exact model id.
    pub model: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WhatIfRequest {
    pub base: PredictRequest,
    pub feature: Feature,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplainRequest {
    pub base: PredictRequest,
    pub task: TaskSpec,
    pub n_permutations: usize,
    pub seed: u64,
    pub units: OutputUnits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutput {
    pub model_id: String,
    pub model: ModelKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub probability: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub value: Option<f64>,
    /// Predicted insulin resistance under this task's criterion: probability
    /// above 0.5, or a regressed METS-IR above the index cut-off.
    pub label: bool,
    pub index_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub schema_version: u32,
    pub version: String,
    pub fingerprint: String,
    pub mask: FeatureMask,
    pub outputs: BTreeMap<TaskSpec, TaskOutput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfResponse {
    pub schema_version: u32,
    pub version: String,
    pub fingerprint: String,
    pub feature: Feature,
    pub values: Vec<f64>,
    pub responses: Vec<PredictResponse>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainResponse {
    pub schema_version: u32,
    pub version: String,
    pub fingerprint: String,
    pub task: TaskSpec,
    pub model_id: String,
    pub units: OutputUnits,
    pub attribution: Attribution,
}

fn object<'a>(v: &'a Value, field: &str, errors: &mut Vec<FieldError>) -> Option<&'a Map<String, Value>> {
    let o = v.as_object();
    if o.is_none() {
        errors.push(FieldError::new(field, "must be a JSON object"));
    }
    o
}

fn path(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn unknown_keys(o: &Map<String, Value>, allowed: &[&str], prefix: &str, errors: &mut Vec<FieldError>) {
    for k in o.keys().filter(|k| !allowed.contains(&k.as_str())) {
        errors.push(FieldError::new(path(prefix, k), "unknown field"));
    }
}

fn check_schema_version(o: &Map<String, Value>, prefix: &str, errors: &mut Vec<FieldError>) {
    if let Some(v) = o.get("schema_version") {
        if v.as_u64() != Some(u64::from(SCHEMA_VERSION)) {
            errors.push(FieldError::new(
                path(prefix, "schema_version"),
                format!("unsupported schema version (this service speaks {SCHEMA_VERSION})"),
            ));
        }
    }
}

/// Range-checks a numeric input.
pub fn check_value(f: Feature, v: f64) -> Result<(), String> {
    let r = range_of(f).ok_or_else(|| format!("{f} is categorical"))?;
    if !v.is_finite() || v < r.min || v > r.max {
        return Err(format!(
            "must be between {} and {} {} (got {v})",
            r.min,
            r.max,
            f.unit()
        ));
    }
    Ok(())
}

fn parse_mask(v: &Value) -> Result<FeatureMask, String> {
    match v {
        Value::String(s) => s.parse::<FeatureMask>(),
        Value::Array(items) => {
            let mut m = FeatureMask::empty();
            for item in items {
                let name = item.as_str().ok_or("feature names must be strings")?;
                m = m.with(name.parse::<Feature>()?);
            }
            Ok(m)
        }
        _ => Err("must be \"full\", \"simplified\" or a list of feature names".into()),
    }
}

fn parse_features(
    o: &Map<String, Value>,
    prefix: &str,
    errors: &mut Vec<FieldError>,
) -> (ParticipantRecord, FeatureMask) {
    let mut rec = ParticipantRecord::empty("request", Source::Nhanes);
    let mut supplied = FeatureMask::empty();
    for (key, v) in o {
        let field = path(prefix, key);
        let Ok(f) = key.parse::<Feature>() else {
            errors.push(FieldError::new(field, "unknown feature"));
            continue;
        };
        if v.is_null() {
            continue;
        }
        match f {
            Feature::Sex => match v.as_str().and_then(|s| Sex::ALL.into_iter().find(|x| x.name() == s)) {
                Some(s) => rec.sex = Some(s),
                None => {
                    let names: Vec<&str> = Sex::ALL.iter().map(|s| s.name()).collect();
                    errors.push(FieldError::new(field, format!("must be one of {}", names.join(", "))));
                    continue;
                }
            },
            Feature::Race => match v.as_str().and_then(|s| Race::ALL.into_iter().find(|x| x.name() == s)) {
                Some(r) => rec.race = Some(r),
                None => {
                    let names: Vec<&str> = Race::ALL.iter().map(|s| s.name()).collect();
                    errors.push(FieldError::new(field, format!("must be one of {}", names.join(", "))));
                    continue;
                }
            },
            _ => {
                let Some(x) = v.as_f64() else {
                    errors.push(FieldError::new(field, format!("must be a number in {}", f.unit())));
                    continue;
                };
                if let Err(msg) = check_value(f, x) {
                    errors.push(FieldError::new(field, msg));
                    continue;
                }
                set_numeric(&mut rec, f, x);
            }
        }
        supplied = supplied.with(f);
    }
    (rec, supplied)
}

const PREDICT_KEYS: [&str; 4] = ["schema_version", "features", "mask", "model"];

fn predict_fields(o: &Map<String, Value>, prefix: &str, errors: &mut Vec<FieldError>) -> Option<PredictRequest> {
    check_schema_version(o, prefix, errors);
    let before = errors.len();
    let features_field = path(prefix, "features");
    let (inputs, supplied) = match o.get("features") {
        Some(v) => {
            let f = object(v, &features_field, errors)?;
            parse_features(f, &features_field, errors)
        },
        None => {
            errors.push(FieldError::new(features_field, "required"));
            return None;
        }
    };
    let mask = match o.get("mask") {
        None | Some(Value::Null) => supplied,
        Some(v) => match parse_mask(v) {
            Ok(m) => {
                for f in m.features() {
                    let invalid = errors[before..]
                        .iter()
                        .any(|e| e.field == path(&features_field, f.name()));
                    if !supplied.contains(f) && !invalid {
                        errors.push(FieldError::new(path(&features_field, f.name()), "required by mask"));
                    }
                }
                m
            }
            Err(msg) => {
                errors.push(FieldError::new(path(prefix, "mask"), msg));
                return None;
            }
        },
    };
    if mask.count() == 0 && errors.len() == before {
        errors.push(FieldError::new(features_field, "at least one input is required"));
    }
    let model = match o.get("model") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => {
            errors.push(FieldError::new(path(prefix, "model"), "must be a string"));
            None
        }
    };
    Some(PredictRequest { inputs, mask, model })
}

fn finish<T>(value: Option<T>, errors: Vec<FieldError>) -> Result<T, Vec<FieldError>> {
    match value {
        Some(v) if errors.is_empty() => Ok(v),
        _ if errors.is_empty() => Err(vec![FieldError::new("", "invalid request")]),
        _ => Err(errors),
    }
}

/// ```json
/// {"features": {"age": 45, "sex": "male", "bmi": 28.4, "fpg": 100},
///  "mask": "simplified", "model": "catboost"}
/// ```
pub fn parse_predict(v: &Value) -> Result<PredictRequest, Vec<FieldError>> {
    let mut errors = Vec::new();
    let Some(o) = object(v, "", &mut errors) else {
        return Err(errors);
    };
    unknown_keys(o, &PREDICT_KEYS, "", &mut errors);
    let req = predict_fields(o, "", &mut errors);
    finish(req, errors)
}

/// ```json
/// {"base": {...predict request...},
///  "sweep": {"feature": "waist", "start": 70, "stop": 120, "steps": 50}}
/// ```
/// The grid may instead be listed as `"values": [...]`.
pub fn parse_whatif(v: &Value) -> Result<WhatIfRequest, Vec<FieldError>> {
    let mut errors = Vec::new();
    let Some(o) = object(v, "", &mut errors) else {
        return Err(errors);
    };
    unknown_keys(o, &["schema_version", "base", "sweep"], "", &mut errors);
    check_schema_version(o, "", &mut errors);
    let explicit_mask = o.get("base").and_then(|b| b.get("mask")).is_some_and(|m| !m.is_null());
    let base = match o.get("base") {
        Some(b) => object(b, "base", &mut errors).and_then(|b| {
            unknown_keys(b, &PREDICT_KEYS, "base", &mut errors);
            predict_fields(b, "base", &mut errors)
        }),
        None => {
            errors.push(FieldError::new("base", "required"));
            None
        }
    };
    let sweep = match o.get("sweep") {
        Some(s) => object(s, "sweep", &mut errors).and_then(|s| parse_sweep(s, &mut errors)),
        None => {
            errors.push(FieldError::new("sweep", "required"));
            None
        }
    };
    let req = match (base, sweep) {
        (Some(mut base), Some((feature, values))) => {
            if !explicit_mask {
                base.mask = base.mask.with(feature);
            }
            if !base.mask.contains(feature) {
                errors.push(FieldError::new(
                    "sweep.feature",
                    format!("{feature} is not among the base request's inputs"),
                ));
            }
            // the swept feature needs no base value of its own
            errors.retain(|e| e.field != format!("base.features.{feature}"));
            if base.inputs.numeric(feature).is_none() {
                set_numeric(&mut base.inputs, feature, values[0]);
            }
            Some(WhatIfRequest { base, feature, values })
        }
        _ => None,
    };
    finish(req, errors)
}

fn parse_sweep(s: &Map<String, Value>, errors: &mut Vec<FieldError>) -> Option<(Feature, Vec<f64>)> {
    unknown_keys(s, &["feature", "values", "start", "stop", "steps"], "sweep", errors);
    let feature = match s.get("feature").and_then(Value::as_str).map(str::parse::<Feature>) {
        Some(Ok(f)) if !f.is_categorical() => f,
        Some(Ok(f)) => {
            errors.push(FieldError::new(
                "sweep.feature",
                format!("{f} is categorical; only numeric inputs can be swept"),
            ));
            return None;
        }
        Some(Err(msg)) => {
            errors.push(FieldError::new("sweep.feature", msg));
            return None;
        }
        None => {
            errors.push(FieldError::new("sweep.feature", "required"));
            return None;
        }
    };
    let values: Vec<f64> = if let Some(v) = s.get("values") {
        if ["start", "stop", "steps"].iter().any(|k| s.contains_key(*k)) {
            errors.push(FieldError::new("sweep", "give either values or start/stop/steps"));
            return None;
        }
        let Some(items) = v.as_array() else {
            errors.push(FieldError::new("sweep.values", "must be an array of numbers"));
            return None;
        };
        let mut out = Vec::with_capacity(items.len());
        for (i, x) in items.iter().enumerate() {
            match x.as_f64() {
                Some(x) => out.push(x),
                None => errors.push(FieldError::new(format!("sweep.values.{i}"), "must be a number")),
            }
        }
        out
    } else {
        let num = |k: &str, errors: &mut Vec<FieldError>| {
            let x = s.get(k).and_then(Value::as_f64);
            if x.is_none() {
                errors.push(FieldError::new(format!("sweep.{k}"), "required number"));
            }
            x
        };
        let (start, stop) = (num("start", errors), num("stop", errors));
        let steps = s.get("steps").and_then(Value::as_u64);
        if steps.is_none() {
            errors.push(FieldError::new("sweep.steps", "required positive integer"));
        }
        let (Some(start), Some(stop), Some(steps)) = (start, stop, steps) else {
            return None;
        };
        let steps = steps as usize;
        if steps == 0 || steps > MAX_SWEEP_POINTS {
            errors.push(FieldError::new(
                "sweep.steps",
                format!("must be between 1 and {MAX_SWEEP_POINTS}"),
            ));
            return None;
        }
        linspace(start, stop, steps)
    };
    if values.is_empty() || values.len() > MAX_SWEEP_POINTS {
        errors.push(FieldError::new(
            "sweep.values",
            format!("grid must have between 1 and {MAX_SWEEP_POINTS} points"),
        ));
        return None;
    }
    let before = errors.len();
    for (i, x) in values.iter().enumerate() {
        if let Err(msg) = check_value(feature, *x) {
            errors.push(FieldError::new(format!("sweep.values.{i}"), msg));
        }
    }
    (errors.len() == before).then_some((feature, values))
}

/// `steps` evenly spaced points from `start` to `stop` inclusive.
pub fn linspace(start: f64, stop: f64, steps: usize) -> Vec<f64> {
    if steps == 1 {
        return vec![start];
    }
    let h = (stop - start) / (steps - 1) as f64;
    (0..steps)
        .map(|i| if i == steps - 1 { stop } else { start + h * i as f64 })
        .collect()
}

pub fn set_numeric(rec: &mut ParticipantRecord, f: Feature, v: f64) {
    let slot = match f {
        Feature::Age => &mut rec.age,
        Feature::Bmi => &mut rec.bmi,
        Feature::Waist => &mut rec.waist,
        Feature::Pulse => &mut rec.pulse,
        Feature::Systolic => &mut rec.systolic,
        Feature::Diastolic => &mut rec.diastolic,
        Feature::Fpg => &mut rec.fpg,
        Feature::Sex | Feature::Race => return,
    };
    *slot = Some(v);
}

/// Predict fields plus `task` (required), `n_permutations`, `seed` and
/// `units` (`probability` or `logit`).
pub fn parse_explain(v: &Value) -> Result<ExplainRequest, Vec<FieldError>> {
    let mut errors = Vec::new();
    let Some(o) = object(v, "", &mut errors) else {
        return Err(errors);
    };
    let mut keys = PREDICT_KEYS.to_vec();
    keys.extend(["task", "n_permutations", "seed", "units"]);
    unknown_keys(o, &keys, "", &mut errors);
    let base = predict_fields(o, "", &mut errors);
    let task = match o.get("task").and_then(Value::as_str).map(str::parse::<TaskSpec>) {
        Some(Ok(t)) => Some(t),
        Some(Err(msg)) => {
            errors.push(FieldError::new("task", msg));
            None
        }
        None => {
            errors.push(FieldError::new("task", "required"));
            None
        }
    };
    let n_permutations = match o.get("n_permutations") {
        None => DEFAULT_PERMUTATIONS,
        Some(v) => match v.as_u64().map(|n| n as usize) {
            Some(n) if (1..=MAX_PERMUTATIONS).contains(&n) => n,
            _ => {
                errors.push(FieldError::new(
                    "n_permutations",
                    format!("must be an integer between 1 and {MAX_PERMUTATIONS}"),
                ));
                DEFAULT_PERMUTATIONS
            }
        },
    };
    let seed = match o.get("seed") {
        None => 0,
        Some(v) => v.as_u64().unwrap_or_else(|| {
            errors.push(FieldError::new("seed", "must be a non-negative integer"));
            0
        }),
    };
    let units = match o.get("units").map(Value::as_str) {
        None | Some(Some("probability")) => OutputUnits::Probability,
        Some(Some("logit")) => OutputUnits::Logit,
        Some(_) => {
            errors.push(FieldError::new("units", "must be \"probability\" or \"logit\""));
            OutputUnits::Probability
        }
    };
    let req = match (base, task) {
        (Some(base), Some(task)) => Some(ExplainRequest {
            base,
            task,
            n_permutations,
            seed,
            units,
        }),
        _ => None,
    };
    finish(req, errors)
}

/// Machine-readable description of the inputs, tasks and limits; the
/// browser client validates against the same document.
pub fn api_schema() -> Value {
    let inputs: Vec<Value> = Feature::ALL
        .iter()
        .map(|f| match (f, range_of(*f)) {
            (_, Some(r)) => json!({"name": f.name(), "kind": "numeric", "unit": f.unit(), "min": r.min, "max": r.max}),
            (Feature::Sex, None) => json!({
                "name": "sex",
                "kind": "categorical",
                "values": Sex::ALL.iter().map(|s| s.name()).collect::<Vec<_>>(),
            }),
            _ => json!({
                "name": "race",
                "kind": "categorical",
                "values": Race::ALL.iter().map(|s| s.name()).collect::<Vec<_>>(),
            }),
        })
        .collect();
    let tasks: Vec<Value> = TaskSpec::ALL
        .iter()
        .map(|t| {
            json!({
                "name": t.name(),
                "output": if t.is_classification() { "probability" } else { "value" },
                "index": t.index_kind().name(),
                "index_threshold": t.index_kind().threshold(),
            })
        })
        .collect();
    json!({
        "schema_version": SCHEMA_VERSION,
        "inputs": inputs,
        "masks": {
            "full": FeatureMask::full().features().iter().map(|f| f.name()).collect::<Vec<_>>(),
            "simplified": FeatureMask::simplified().features().iter().map(|f| f.name()).collect::<Vec<_>>(),
        },
        "tasks": tasks,
        "models": ModelKind::ALL.iter().map(|k| k.name()).collect::<Vec<_>>(),
        "limits": {
            "max_sweep_points": MAX_SWEEP_POINTS,
            "max_permutations": MAX_PERMUTATIONS,
            "default_permutations": DEFAULT_PERMUTATIONS,
        },
        "endpoints": {
            "health": "GET /health",
            "models": "GET /models",
            "schema": "GET /schema",
            "predict": "POST /predict",
            "whatif": "POST /whatif",
            "explain": "POST /explain",
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full() -> Value {
        json!({"features": {
            "age": 45, "sex": "male", "race": "non_hispanic_white", "bmi": 28.41, "waist": 95,
            "pulse": 70, "systolic": 120, "diastolic": 80, "fpg": 100
        }})
    }

    #[test]
    fn accepts_complete_input() {
        let r = parse_predict(&full()).unwrap();
        assert_eq!(r.mask, FeatureMask::full());
        assert_eq!(r.inputs.bmi, Some(28.41));
        assert_eq!(r.inputs.sex, Some(Sex::Male));
    }

    #[test]
    fn under_age_is_a_field_error() {
        let mut v = full();
        v["features"]["age"] = json!(17);
        let e = parse_predict(&v).unwrap_err();
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].field, "features.age");
        assert!(e[0].message.contains("18"), "{}", e[0].message);
    }

    #[test]
    fn boundaries_are_inclusive() {
        for r in RANGES {
            assert!(check_value(r.feature, r.min).is_ok());
            assert!(check_value(r.feature, r.max).is_ok());
            assert!(check_value(r.feature, r.min - 1e-9).is_err());
            assert!(check_value(r.feature, r.max + 1e-9).is_err());
        }
    }

    #[test]
    fn collects_every_bad_field() {
        let v = json!({"features": {"age": "old", "sex": "x", "fpg": 500, "hdl": 40}, "extra": 1});
        let mut fields: Vec<String> = parse_predict(&v).unwrap_err().into_iter().map(|e| e.field).collect();
        fields.sort();
        assert_eq!(
            fields,
            ["extra", "features.age", "features.fpg", "features.hdl", "features.sex"]
        );
    }

    #[test]
    fn simplified_mask_needs_only_bmi_and_glucose() {
        let r = parse_predict(&json!({"features": {"bmi": 30, "fpg": 110}, "mask": "simplified"})).unwrap();
        assert_eq!(r.mask, FeatureMask::simplified());
        let e = parse_predict(&json!({"features": {"bmi": 30}, "mask": "simplified"})).unwrap_err();
        assert_eq!(e[0].field, "features.fpg");
        let r =
            parse_predict(&json!({"features": {"bmi": 30, "fpg": 110, "age": 50}, "mask": ["bmi", "fpg"]})).unwrap();
        assert_eq!(r.mask, FeatureMask::simplified());
    }

    #[test]
    fn whatif_grid() {
        let v = json!({"base": full(), "sweep": {"feature": "waist", "start": 70, "stop": 120, "steps": 50}});
        let w = parse_whatif(&v).unwrap();
        assert_eq!(w.values.len(), 50);
        assert_eq!((w.values[0], w.values[49]), (70.0, 120.0));
        assert!(w.values.windows(2).all(|p| p[0] < p[1]));

        let too_many = json!({"base": full(), "sweep": {"feature": "waist", "start": 70, "stop": 120, "steps": 201}});
        assert_eq!(parse_whatif(&too_many).unwrap_err()[0].field, "sweep.steps");
        let out_of_range = json!({"base": full(), "sweep": {"feature": "waist", "values": [70, 500]}});
        assert_eq!(parse_whatif(&out_of_range).unwrap_err()[0].field, "sweep.values.1");
        let categorical = json!({"base": full(), "sweep": {"feature": "sex", "values": [1]}});
        assert_eq!(parse_whatif(&categorical).unwrap_err()[0].field, "sweep.feature");
    }

    #[test]
    fn explain_defaults() {
        let mut v = full();
        v["task"] = json!("mets_class");
        let r = parse_explain(&v).unwrap();
        assert_eq!((r.n_permutations, r.seed, r.units), (256, 0, OutputUnits::Probability));
        v["n_permutations"] = json!(0);
        assert_eq!(parse_explain(&v).unwrap_err()[0].field, "n_permutations");
    }

    #[test]
    fn linspace_endpoints() {
        assert_eq!(linspace(1.0, 2.0, 1), [1.0]);
        assert_eq!(linspace(0.0, 1.0, 3), [0.0, 0.5, 1.0]);
    }
}
