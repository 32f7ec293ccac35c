//! CSV ingestion.
//!
//! Column dictionary (header names are case-insensitive):
//!
//! | column    | unit / values                                    | NHANES | CHARLS |
//! |-----------|--------------------------------------------------|--------|--------|
//! | id        | participant identifier                           | req    | req    |
//! | age       | years                                            | req    | req    |
//! | sex       | male/female or 1/2                               | req    | req    |
//! | race      | snake-case name or RIDRETH1 code 1–5             | req    | ignored, forced to other_multi |
//! | height    | cm                                               | opt    | opt    |
//! | weight    | kg                                               | opt    | opt    |
//! | bmi       | kg/m²; derived from height/weight when absent    | req*   | req*   |
//! | waist     | cm                                               | req    | opt    |
//! | pulse     | beats per 60 s                                   | req    | req    |
//! | systolic  | mmHg                                             | req    | req    |
//! | diastolic | mmHg                                             | req    | req    |
//! | fpg       | fasting plasma glucose, mg/dL                    | req    | req    |
//! | insulin   | fasting insulin, µU/mL                           | req    | ignored |
//! | tg        | triglycerides, mg/dL                             | req    | req    |
//! | hdl       | HDL cholesterol, mg/dL                           | req    | req    |
//! | diabetes  | 0/1, true/false, yes/no                          | req    | req    |
//!
//! `req*`: either `bmi` or both `height` and `weight` must be present.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetError, ParticipantRecord, Race, Sex, Source};
use crate::indices;

const NHANES_REQUIRED: &[&str] = &[
    "id",
    "age",
    "sex",
    "race",
    "waist",
    "pulse",
    "systolic",
    "diastolic",
    "fpg",
    "insulin",
    "tg",
    "hdl",
    "diabetes",
];
const CHARLS_REQUIRED: &[&str] = &[
    "id",
    "age",
    "sex",
    "pulse",
    "systolic",
    "diastolic",
    "fpg",
    "tg",
    "hdl",
    "diabetes",
];
const ALL_COLUMNS: &[&str] = &[
    "id",
    "age",
    "sex",
    "race",
    "height",
    "weight",
    "bmi",
    "waist",
    "pulse",
    "systolic",
    "diastolic",
    "fpg",
    "insulin",
    "tg",
    "hdl",
    "diabetes",
];
/// Fields that must be strictly positive when present.
const POSITIVE: &[&str] = &[
    "height",
    "weight",
    "bmi",
    "waist",
    "pulse",
    "systolic",
    "diastolic",
    "fpg",
    "tg",
    "hdl",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellFlag {
    /// 1-based data row (header excluded).
    pub row: usize,
    pub column: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseReport {
    pub rows_read: usize,
    pub rows_kept: usize,
    /// Rows with at least one flagged cell.
    pub rows_flagged: usize,
    pub flags: Vec<CellFlag>,
    pub warnings: Vec<String>,
}

pub fn parse_csv(
    path: impl AsRef<Path>,
    source: Source,
) -> Result<(Vec<ParticipantRecord>, ParseReport), DatasetError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_csv_reader(file, source)
}

pub fn parse_csv_reader<R: Read>(
    reader: R,
    source: Source,
) -> Result<(Vec<ParticipantRecord>, ParseReport), DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().trim_start_matches('\u{feff}').to_ascii_lowercase())
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(DatasetError::Empty("no header row".into()));
    }
    let col: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();

    let required = match source {
        Source::Nhanes => NHANES_REQUIRED,
        Source::Charls => CHARLS_REQUIRED,
    };
    let mut missing: Vec<String> = required
        .iter()
        .filter(|c| !col.contains_key(**c))
        .map(|c| c.to_string())
        .collect();
    if !col.contains_key("bmi") && !(col.contains_key("height") && col.contains_key("weight")) {
        missing.push("bmi (or height+weight)".into());
    }
    if !missing.is_empty() {
        return Err(DatasetError::Schema(missing));
    }

    let mut report = ParseReport::default();
    if source == Source::Charls {
        if col.contains_key("race") {
            report
                .warnings
                .push("CHARLS file has a race column; race forced to other_multi".into());
        }
        if col.contains_key("insulin") {
            report
                .warnings
                .push("CHARLS file has an insulin column; values ignored".into());
        }
    }
    for h in &headers {
        if !ALL_COLUMNS.contains(&h.as_str()) {
            report.warnings.push(format!("unknown column `{h}` ignored"));
        }
    }

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        report.rows_read += 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                report.flags.push(CellFlag {
                    row: row_no,
                    column: "*".into(),
                    reason: format!("unreadable row: {e}"),
                });
                report.rows_flagged += 1;
                continue;
            }
        };
        if row.len() != headers.len() {
            report.flags.push(CellFlag {
                row: row_no,
                column: "*".into(),
                reason: format!("expected {} fields, found {}", headers.len(), row.len()),
            });
            report.rows_flagged += 1;
            continue;
        }
        let mut flags = Vec::new();
        let rec = parse_row(&row, &col, source, row_no, &mut flags);
        if !flags.is_empty() {
            report.rows_flagged += 1;
            report.flags.extend(flags);
        }
        records.push(rec);
    }
    if report.rows_read == 0 {
        return Err(DatasetError::Empty("no data rows".into()));
    }
    report.rows_kept = records.len();
    Ok((records, report))
}

fn parse_row(
    row: &csv::StringRecord,
    col: &HashMap<&str, usize>,
    source: Source,
    row_no: usize,
    flags: &mut Vec<CellFlag>,
) -> ParticipantRecord {
    let cell = |name: &str| col.get(name).and_then(|&i| row.get(i)).unwrap_or("");
    let mut flag = |column: &str, reason: String| {
        flags.push(CellFlag {
            row: row_no,
            column: column.into(),
            reason,
        })
    };

    let id = match cell("id") {
        "" => {
            flag("id", "missing id; generated".into());
            format!("row{row_no}")
        }
        s => s.to_string(),
    };
    let mut rec = ParticipantRecord::empty(id, source);

    let mut num = |name: &str| -> Option<f64> {
        if !col.contains_key(name) {
            return None;
        }
        let raw = cell(name);
        if raw.is_empty() {
            // bmi may still be derived from height and weight below
            if name != "bmi" {
                flag(name, "missing".into());
            }
            return None;
        }
        match raw.parse::<f64>() {
            Ok(v) if !v.is_finite() => {
                flag(name, format!("non-finite `{raw}`"));
                None
            }
            Ok(v) if POSITIVE.contains(&name) && v <= 0.0 => {
                flag(name, format!("non-positive `{raw}`"));
                None
            }
            Ok(v) if v < 0.0 => {
                flag(name, format!("negative `{raw}`"));
                None
            }
            Ok(v) => Some(v),
            Err(_) => {
                flag(name, format!("unparseable `{raw}`"));
                None
            }
        }
    };
    rec.age = num("age");
    rec.height = num("height");
    rec.weight = num("weight");
    rec.bmi = num("bmi");
    rec.waist = num("waist");
    rec.pulse = num("pulse");
    rec.systolic = num("systolic");
    rec.diastolic = num("diastolic");
    rec.fpg = num("fpg");
    rec.tg = num("tg");
    rec.hdl = num("hdl");
    if source == Source::Nhanes {
        rec.insulin = num("insulin");
    }

    rec.sex = match cell("sex") {
        "" => {
            flag("sex", "missing".into());
            None
        }
        s => match s.parse::<Sex>() {
            Ok(v) => Some(v),
            Err(e) => {
                flag("sex", e);
                None
            }
        },
    };
    rec.race = match source {
        Source::Charls => Some(Race::OtherMulti),
        Source::Nhanes => match cell("race") {
            "" => {
                flag("race", "missing".into());
                None
            }
            s => match s.parse::<Race>() {
                Ok(v) => Some(v),
                Err(e) => {
                    flag("race", e);
                    None
                }
            },
        },
    };
    rec.diabetes = match cell("diabetes").to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" => Some(true),
        "0" | "false" | "no" | "n" => Some(false),
        "" => {
            flag("diabetes", "missing".into());
            None
        }
        other => {
            flag("diabetes", format!("unparseable `{other}`"));
            None
        }
    };
    if rec.bmi.is_none() {
        if let (Some(w), Some(h)) = (rec.weight, rec.height) {
            rec.bmi = indices::bmi(w, h).ok();
        }
        if rec.bmi.is_none() && cell("bmi").is_empty() {
            flag("bmi", "missing".into());
        }
    }
    rec
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes records using the column dictionary of `source`.
pub fn write_csv(path: impl AsRef<Path>, records: &[ParticipantRecord], source: Source) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let columns: Vec<&str> = ALL_COLUMNS
        .iter()
        .copied()
        .filter(|c| source == Source::Nhanes || (*c != "race" && *c != "insulin"))
        .collect();
    w.write_record(&columns)?;
    for r in records {
        let row: Vec<String> = columns
            .iter()
            .map(|c| match *c {
                "id" => r.id.clone(),
                "age" => fmt_opt(r.age),
                "sex" => r.sex.map(|s| s.name().to_string()).unwrap_or_default(),
                "race" => r.race.map(|s| s.name().to_string()).unwrap_or_default(),
                "height" => fmt_opt(r.height),
                "weight" => fmt_opt(r.weight),
                "bmi" => fmt_opt(r.bmi),
                "waist" => fmt_opt(r.waist),
                "pulse" => fmt_opt(r.pulse),
                "systolic" => fmt_opt(r.systolic),
                "diastolic" => fmt_opt(r.diastolic),
                "fpg" => fmt_opt(r.fpg),
                "insulin" => fmt_opt(r.insulin),
                "tg" => fmt_opt(r.tg),
                "hdl" => fmt_opt(r.hdl),
                "diabetes" => match r.diabetes {
                    Some(true) => "1".into(),
                    Some(false) => "0".into(),
                    None => String::new(),
                },
                _ => unreachable!(),
            })
            .collect();
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str =
        "id,age,sex,race,height,weight,bmi,waist,pulse,systolic,diastolic,fpg,insulin,tg,hdl,diabetes\n";

    fn parse(body: &str, source: Source) -> Result<(Vec<ParticipantRecord>, ParseReport), DatasetError> {
        parse_csv_reader(body.as_bytes(), source)
    }

    #[test]
    fn well_formed_rows() {
        let csv = format!(
            "{HEADER}a,40,male,3,180,81,,95,70,120,80,100,10,117,54.6,0\n\
             b,55,2,non_hispanic_black,160,70,27.3,90,72,130,85,105,12,140,50,0\n\
             c,33,female,1,165,60,22,80,65,110,70,90,8,90,60,no\n"
        );
        let (recs, rep) = parse(&csv, Source::Nhanes).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(rep.rows_flagged, 0, "{:?}", rep.flags);
        assert!((recs[0].bmi.unwrap() - 25.0).abs() < 1e-12);
        assert_eq!(recs[1].race, Some(Race::NonHispanicBlack));
        assert_eq!(recs[2].diabetes, Some(false));
    }

    #[test]
    fn empty_cell_is_missing_and_flagged() {
        let csv = format!("{HEADER}a,40,male,3,180,81,25,95,70,120,80,,10,117,54.6,0\n");
        let (recs, rep) = parse(&csv, Source::Nhanes).unwrap();
        assert_eq!(recs[0].fpg, None);
        assert_eq!(rep.rows_flagged, 1);
        assert_eq!(rep.flags.len(), 1);
        assert_eq!(rep.flags[0].column, "fpg");
    }

    #[test]
    fn charls_race_column_forced() {
        let csv = "id,age,sex,race,bmi,pulse,systolic,diastolic,fpg,tg,hdl,diabetes\n\
                   c1,60,female,3,23.8,73,127,75,94,136,51.7,0\n";
        let (recs, rep) = parse(csv, Source::Charls).unwrap();
        assert_eq!(recs[0].race, Some(Race::OtherMulti));
        assert_eq!(recs[0].insulin, None);
        assert!(rep.warnings.iter().any(|w| w.contains("race forced")));
    }

    #[test]
    fn missing_columns_are_listed() {
        let err = parse("id,age,sex\n1,40,male\n", Source::Nhanes).unwrap_err();
        match err {
            DatasetError::Schema(cols) => {
                assert!(cols.contains(&"fpg".to_string()));
                assert!(cols.contains(&"insulin".to_string()));
                assert!(cols.iter().any(|c| c.starts_with("bmi")));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(parse("", Source::Nhanes), Err(DatasetError::Empty(_))));
        assert!(matches!(parse(HEADER, Source::Nhanes), Err(DatasetError::Empty(_))));
    }

    #[test]
    fn write_then_parse() {
        let csv = format!("{HEADER}a,40,male,3,180,81,25,95,70,120,80,100,10,117,54.6,0\n");
        let (recs, _) = parse(&csv, Source::Nhanes).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        write_csv(&p, &recs, Source::Nhanes).unwrap();
        let (back, rep) = parse_csv(&p, Source::Nhanes).unwrap();
        assert_eq!(back, recs);
        assert_eq!(rep.rows_flagged, 0);
    }
}
