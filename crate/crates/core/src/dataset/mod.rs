//! Cohort preparation: CSV ingestion, exclusion rules, prediction targets,
//! the 6:2:2 split and feature encoding.

mod encode;
mod exclude;
mod ingest;
mod split;
pub mod synth;

pub use encode::{FeatureEncoder, Scaler};
pub use exclude::{apply_exclusions, derive_target, derive_target_with, ExclusionCriteria, ExclusionReport, Target};
pub use ingest::{parse_csv, parse_csv_reader, write_csv, CellFlag, ParseReport};
pub use split::{split, SplitAssignment, SplitConfig, SplitKind, Splits};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::indices::{IndexError, IndexKind};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("schema error: missing mandatory columns {0:?}")]
    Schema(Vec<String>),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("missing field `{field}` for record {id}")]
    MissingField { id: String, field: &'static str },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    pub const ALL: [Sex; 2] = [Sex::Male, Sex::Female];

    pub fn name(self) -> &'static str {
        match self {
            Sex::Male => "male",
            Sex::Female => "female",
        }
    }
}

impl FromStr for Sex {
    type Err = String;

    /// Accepts names or NHANES `RIAGENDR` codes (1 = male, 2 = female).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" | "m" | "1" => Ok(Sex::Male),
            "female" | "f" | "2" => Ok(Sex::Female),
            other => Err(format!("unknown sex `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Race {
    MexicanAmerican,
    OtherHispanic,
    NonHispanicWhite,
    NonHispanicBlack,
    OtherMulti,
}

impl Race {
    pub const ALL: [Race; 5] = [
        Race::MexicanAmerican,
        Race::OtherHispanic,
        Race::NonHispanicWhite,
        Race::NonHispanicBlack,
        Race::OtherMulti,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Race::MexicanAmerican => "mexican_american",
            Race::OtherHispanic => "other_hispanic",
            Race::NonHispanicWhite => "non_hispanic_white",
            Race::NonHispanicBlack => "non_hispanic_black",
            Race::OtherMulti => "other_multi",
        }
    }
}

impl FromStr for Race {
    type Err = String;

    /// Accepts snake-case names or NHANES `RIDRETH1` codes 1–5.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        match key.as_str() {
            "mexican_american" | "1" => Ok(Race::MexicanAmerican),
            "other_hispanic" | "2" => Ok(Race::OtherHispanic),
            "non_hispanic_white" | "3" => Ok(Race::NonHispanicWhite),
            "non_hispanic_black" | "4" => Ok(Race::NonHispanicBlack),
            "other_multi" | "other" | "5" => Ok(Race::OtherMulti),
            other => Err(format!("unknown race `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Nhanes,
    Charls,
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nhanes" => Ok(Source::Nhanes),
            "charls" => Ok(Source::Charls),
            other => Err(format!("unknown source `{other}` (expected nhanes or charls)")),
        }
    }
}

/// One survey participant. Numeric fields are `None` when missing or
/// unparseable in the input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantRecord {
    pub id: String,
    pub age: Option<f64>,
    pub sex: Option<Sex>,
    pub race: Option<Race>,
    pub height: Option<f64>,
    pub weight: Option<f64>,
    pub bmi: Option<f64>,
    pub waist: Option<f64>,
    pub pulse: Option<f64>,
    pub systolic: Option<f64>,
    pub diastolic: Option<f64>,
    pub fpg: Option<f64>,
    pub insulin: Option<f64>,
    pub tg: Option<f64>,
    pub hdl: Option<f64>,
    pub diabetes: Option<bool>,
    pub source: Source,
}

impl ParticipantRecord {
    pub fn empty(id: impl Into<String>, source: Source) -> Self {
        Self {
            id: id.into(),
            age: None,
            sex: None,
            race: None,
            height: None,
            weight: None,
            bmi: None,
            waist: None,
            pulse: None,
            systolic: None,
            diastolic: None,
            fpg: None,
            insulin: None,
            tg: None,
            hdl: None,
            diabetes: None,
            source,
        }
    }

    /// Raw value of a model feature; categorical features are not numeric
    /// here and return `None`.
    pub fn numeric(&self, f: Feature) -> Option<f64> {
        match f {
            Feature::Age => self.age,
            Feature::Bmi => self.bmi,
            Feature::Waist => self.waist,
            Feature::Pulse => self.pulse,
            Feature::Systolic => self.systolic,
            Feature::Diastolic => self.diastolic,
            Feature::Fpg => self.fpg,
            Feature::Sex | Feature::Race => None,
        }
    }

    pub fn has_feature(&self, f: Feature) -> bool {
        match f {
            Feature::Sex => self.sex.is_some(),
            Feature::Race => self.race.is_some(),
            other => self.numeric(other).is_some(),
        }
    }
}

/// The nine model inputs, in slot order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Age,
    Sex,
    Race,
    Bmi,
    Waist,
    Pulse,
    Systolic,
    Diastolic,
    Fpg,
}

impl Feature {
    pub const COUNT: usize = 9;

    pub const ALL: [Feature; 9] = [
        Feature::Age,
        Feature::Sex,
        Feature::Race,
        Feature::Bmi,
        Feature::Waist,
        Feature::Pulse,
        Feature::Systolic,
        Feature::Diastolic,
        Feature::Fpg,
    ];

    /// Numeric features in encoder order.
    pub const NUMERIC: [Feature; 7] = [
        Feature::Age,
        Feature::Bmi,
        Feature::Waist,
        Feature::Pulse,
        Feature::Systolic,
        Feature::Diastolic,
        Feature::Fpg,
    ];

    pub const CATEGORICAL: [Feature; 2] = [Feature::Sex, Feature::Race];

    pub fn slot(self) -> usize {
        self as usize
    }

    pub fn from_slot(slot: usize) -> Option<Feature> {
        Self::ALL.get(slot).copied()
    }

    pub fn is_categorical(self) -> bool {
        matches!(self, Feature::Sex | Feature::Race)
    }

    /// Position within [`Feature::NUMERIC`] or [`Feature::CATEGORICAL`].
    pub fn group_index(self) -> usize {
        if self.is_categorical() {
            Self::CATEGORICAL.iter().position(|f| *f == self).unwrap()
        } else {
            Self::NUMERIC.iter().position(|f| *f == self).unwrap()
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::Age => "age",
            Feature::Sex => "sex",
            Feature::Race => "race",
            Feature::Bmi => "bmi",
            Feature::Waist => "waist",
            Feature::Pulse => "pulse",
            Feature::Systolic => "systolic",
            Feature::Diastolic => "diastolic",
            Feature::Fpg => "fpg",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Feature::Age => "years",
            Feature::Sex | Feature::Race => "category",
            Feature::Bmi => "kg/m2",
            Feature::Waist => "cm",
            Feature::Pulse => "beats/min",
            Feature::Systolic | Feature::Diastolic => "mmHg",
            Feature::Fpg => "mg/dL",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase();
        Feature::ALL
            .into_iter()
            .find(|f| f.name() == key)
            .ok_or_else(|| format!("unknown feature `{s}`"))
    }
}

/// Which of the nine feature slots a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FeatureMask(u16);

impl FeatureMask {
    pub fn full() -> Self {
        Self((1 << Feature::COUNT) - 1)
    }

    /// BMI and fasting glucose only.
    pub fn simplified() -> Self {
        Self::from_features(&[Feature::Bmi, Feature::Fpg])
    }

    pub fn empty() -> Self {
        Self(0)
    }

    pub fn from_features(features: &[Feature]) -> Self {
        Self(features.iter().fold(0, |m, f| m | (1 << f.slot())))
    }

    pub fn contains(self, f: Feature) -> bool {
        self.0 & (1 << f.slot()) != 0
    }

    pub fn with(self, f: Feature) -> Self {
        Self(self.0 | (1 << f.slot()))
    }

    pub fn without(self, f: Feature) -> Self {
        Self(self.0 & !(1 << f.slot()))
    }

    pub fn count(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn features(self) -> Vec<Feature> {
        Feature::ALL.into_iter().filter(|f| self.contains(*f)).collect()
    }

    pub fn numeric(self) -> Vec<Feature> {
        Feature::NUMERIC.into_iter().filter(|f| self.contains(*f)).collect()
    }

    pub fn categorical(self) -> Vec<Feature> {
        Feature::CATEGORICAL.into_iter().filter(|f| self.contains(*f)).collect()
    }

    pub fn is_subset_of(self, other: FeatureMask) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn bits(self) -> u16 {
        self.0
    }
}

impl Default for FeatureMask {
    fn default() -> Self {
        Self::full()
    }
}

impl fmt::Display for FeatureMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == Self::full() {
            return f.write_str("full");
        }
        if *self == Self::simplified() {
            return f.write_str("simplified");
        }
        let names: Vec<&str> = self.features().iter().map(|x| x.name()).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for FeatureMask {
    type Err = String;

    /// `full`, `simplified`, or a comma-separated feature list.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "full" => Ok(Self::full()),
            "simplified" => Ok(Self::simplified()),
            list => {
                let mut m = Self::empty();
                for part in list.split(',').filter(|p| !p.trim().is_empty()) {
                    m = m.with(part.parse()?);
                }
                if m.count() == 0 {
                    return Err("feature mask selects no features".into());
                }
                Ok(m)
            }
        }
    }
}

impl Serialize for FeatureMask {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FeatureMask {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Model input: raw numeric values (original units) and categorical codes
/// in the nine slots, plus the presence mask. Masked-out slots hold 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: [f64; Feature::COUNT],
    pub mask: FeatureMask,
}

impl FeatureVector {
    pub fn get(&self, f: Feature) -> f64 {
        self.values[f.slot()]
    }

    pub fn set(&mut self, f: Feature, v: f64) {
        self.values[f.slot()] = v;
    }

    pub fn numeric(&self) -> [f64; 7] {
        Feature::NUMERIC.map(|f| self.get(f))
    }

    pub fn categorical(&self) -> [u32; 2] {
        Feature::CATEGORICAL.map(|f| self.get(f) as u32)
    }

    /// Number of slots that carry data.
    pub fn dimension(&self) -> usize {
        self.mask.count()
    }
}

/// The four prediction tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSpec {
    HomaClass,
    TygClass,
    MetsClass,
    MetsRegress,
}

impl TaskSpec {
    pub const ALL: [TaskSpec; 4] = [
        TaskSpec::HomaClass,
        TaskSpec::TygClass,
        TaskSpec::MetsClass,
        TaskSpec::MetsRegress,
    ];

    pub fn index_kind(self) -> IndexKind {
        match self {
            TaskSpec::HomaClass => IndexKind::HomaIr,
            TaskSpec::TygClass => IndexKind::Tyg,
            TaskSpec::MetsClass | TaskSpec::MetsRegress => IndexKind::MetsIr,
        }
    }

    pub fn threshold(self) -> Option<f64> {
        self.is_classification().then(|| self.index_kind().threshold())
    }

    pub fn is_classification(self) -> bool {
        !matches!(self, TaskSpec::MetsRegress)
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskSpec::HomaClass => "homa_class",
            TaskSpec::TygClass => "tyg_class",
            TaskSpec::MetsClass => "mets_class",
            TaskSpec::MetsRegress => "mets_regress",
        }
    }

    /// Laboratory fields the task's formula needs.
    pub fn required_labs(self) -> &'static [&'static str] {
        match self {
            TaskSpec::HomaClass => &["fpg", "insulin"],
            TaskSpec::TygClass => &["fpg", "tg"],
            TaskSpec::MetsClass | TaskSpec::MetsRegress => &["fpg", "tg", "bmi", "hdl"],
        }
    }

    /// CHARLS carries no insulin, so HOMA-IR has no external labels.
    pub fn externally_available(self) -> bool {
        !matches!(self, TaskSpec::HomaClass)
    }
}

impl fmt::Display for TaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase();
        TaskSpec::ALL
            .into_iter()
            .find(|t| t.name() == key)
            .ok_or_else(|| format!("unknown task `{s}`"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_round_trips_through_text() {
        for m in [
            FeatureMask::full(),
            FeatureMask::simplified(),
            FeatureMask::from_features(&[Feature::Age, Feature::Race, Feature::Fpg]),
        ] {
            assert_eq!(m.to_string().parse::<FeatureMask>().unwrap(), m);
        }
        assert_eq!(FeatureMask::simplified().count(), 2);
        assert!("".parse::<FeatureMask>().is_err());
    }

    #[test]
    fn vocabularies_parse_codes_and_names() {
        assert_eq!("2".parse::<Sex>().unwrap(), Sex::Female);
        assert_eq!("Non-Hispanic White".parse::<Race>().unwrap(), Race::NonHispanicWhite);
        assert_eq!("5".parse::<Race>().unwrap(), Race::OtherMulti);
        assert!("martian".parse::<Race>().is_err());
    }

    #[test]
    fn nine_slots() {
        assert_eq!(Feature::ALL.len(), 9);
        assert_eq!(Feature::NUMERIC.len() + Feature::CATEGORICAL.len(), 9);
        for (i, f) in Feature::ALL.iter().enumerate() {
            assert_eq!(f.slot(), i);
        }
    }
}
