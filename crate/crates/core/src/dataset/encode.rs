use serde::{Deserialize, Serialize};

use super::{DatasetError, Feature, FeatureMask, FeatureVector, ParticipantRecord, Race, Sex};

/// Z-score parameters for the seven numeric features (population std).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: [f64; 7],
    pub std: [f64; 7],
}

impl Scaler {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; 7],
            std: [1.0; 7],
        }
    }

    pub fn apply(&self, numeric_index: usize, raw: f64) -> f64 {
        (raw - self.mean[numeric_index]) / self.std[numeric_index]
    }
}

/// Categorical vocabularies and numeric scaling fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub mask: FeatureMask,
    pub scaler: Scaler,
    pub sex_vocab: Vec<Sex>,
    /// Always contains `OtherMulti`, the code for unseen races.
    pub race_vocab: Vec<Race>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl FeatureEncoder {
    pub fn fit(train: &[ParticipantRecord], mask: FeatureMask) -> Result<Self, DatasetError> {
        if train.is_empty() {
            return Err(DatasetError::Empty("encoder needs training records".into()));
        }
        let mut warnings = Vec::new();
        let mut scaler = Scaler::identity();
        for (k, f) in Feature::NUMERIC.iter().enumerate() {
            if !mask.contains(*f) {
                continue;
            }
            let vals: Vec<f64> = train.iter().filter_map(|r| r.numeric(*f)).collect();
            if vals.is_empty() {
                return Err(DatasetError::MissingField {
                    id: "<train>".into(),
                    field: f.name(),
                });
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            scaler.mean[k] = mean;
            scaler.std[k] = if std > 1e-12 {
                std
            } else {
                let msg = format!("feature `{}` has zero variance; std clamped to 1", f.name());
                log::warn!("{msg}");
                warnings.push(msg);
                1.0
            };
        }
        let mut race_vocab: Vec<Race> = Race::ALL
            .into_iter()
            .filter(|race| train.iter().any(|r| r.race == Some(*race)))
            .collect();
        if !race_vocab.contains(&Race::OtherMulti) {
            race_vocab.push(Race::OtherMulti);
        }
        Ok(Self {
            mask,
            scaler,
            sex_vocab: Sex::ALL.to_vec(),
            race_vocab,
            warnings,
        })
    }

    pub fn vocab_size(&self, f: Feature) -> usize {
        match f {
            Feature::Sex => self.sex_vocab.len(),
            Feature::Race => self.race_vocab.len(),
            _ => 0,
        }
    }

    pub fn sex_code(&self, s: Sex) -> u32 {
        self.sex_vocab.iter().position(|v| *v == s).unwrap_or(0) as u32
    }

    pub fn race_code(&self, r: Race) -> u32 {
        let pos = self.race_vocab.iter().position(|v| *v == r);
        let fallback = self
            .race_vocab
            .iter()
            .position(|v| *v == Race::OtherMulti)
            .expect("OtherMulti reserved");
        pos.unwrap_or(fallback) as u32
    }

    pub fn decode_sex(&self, code: u32) -> Option<Sex> {
        self.sex_vocab.get(code as usize).copied()
    }

    pub fn decode_race(&self, code: u32) -> Option<Race> {
        self.race_vocab.get(code as usize).copied()
    }

    /// Raw feature vector under the encoder's mask.
    pub fn encode(&self, rec: &ParticipantRecord) -> Result<FeatureVector, DatasetError> {
        self.encode_masked(rec, self.mask)
    }

    pub fn encode_masked(&self, rec: &ParticipantRecord, mask: FeatureMask) -> Result<FeatureVector, DatasetError> {
        let mut fv = FeatureVector {
            values: [0.0; Feature::COUNT],
            mask,
        };
        for f in mask.features() {
            let missing = || DatasetError::MissingField {
                id: rec.id.clone(),
                field: f.name(),
            };
            let v = match f {
                Feature::Sex => f64::from(self.sex_code(rec.sex.ok_or_else(missing)?)),
                Feature::Race => f64::from(self.race_code(rec.race.ok_or_else(missing)?)),
                other => rec.numeric(other).ok_or_else(missing)?,
            };
            fv.set(f, v);
        }
        Ok(fv)
    }

    pub fn encode_all(&self, recs: &[ParticipantRecord]) -> Result<Vec<FeatureVector>, DatasetError> {
        recs.iter().map(|r| self.encode(r)).collect()
    }

    /// Z-scored numerics in [`Feature::NUMERIC`] order; masked-out slots are 0.
    pub fn standardize(&self, fv: &FeatureVector) -> [f64; 7] {
        let mut out = [0.0; 7];
        for (k, f) in Feature::NUMERIC.iter().enumerate() {
            if fv.mask.contains(*f) {
                out[k] = self.scaler.apply(k, fv.get(*f));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Source;

    fn rec(id: &str, age: f64, race: Race) -> ParticipantRecord {
        let mut r = ParticipantRecord::empty(id, Source::Nhanes);
        r.age = Some(age);
        r.sex = Some(Sex::Female);
        r.race = Some(race);
        for v in [
            &mut r.bmi,
            &mut r.waist,
            &mut r.pulse,
            &mut r.systolic,
            &mut r.diastolic,
            &mut r.fpg,
        ] {
            *v = Some(age * 2.0);
        }
        r
    }

    #[test]
    fn population_zscore() {
        let train = [
            rec("a", 1.0, Race::MexicanAmerican),
            rec("b", 3.0, Race::MexicanAmerican),
        ];
        let enc = FeatureEncoder::fit(&train, FeatureMask::full()).unwrap();
        let z = enc.standardize(&enc.encode(&train[1]).unwrap());
        assert!((z[0] - 1.0).abs() < 1e-12);
        let mid = enc.encode(&rec("c", 2.0, Race::MexicanAmerican)).unwrap();
        assert_eq!(enc.standardize(&mid)[0], 0.0);
    }

    #[test]
    fn unseen_race_maps_to_other_multi() {
        let train = [
            rec("a", 30.0, Race::NonHispanicWhite),
            rec("b", 40.0, Race::NonHispanicBlack),
        ];
        let enc = FeatureEncoder::fit(&train, FeatureMask::full()).unwrap();
        let code = enc.race_code(Race::MexicanAmerican);
        assert_eq!(enc.decode_race(code), Some(Race::OtherMulti));
        for r in [Race::NonHispanicWhite, Race::NonHispanicBlack, Race::OtherMulti] {
            assert_eq!(enc.decode_race(enc.race_code(r)), Some(r));
        }
        for s in Sex::ALL {
            assert_eq!(enc.decode_sex(enc.sex_code(s)), Some(s));
        }
    }

    #[test]
    fn zero_variance_is_clamped() {
        let train = [rec("a", 5.0, Race::OtherMulti), rec("b", 5.0, Race::OtherMulti)];
        let enc = FeatureEncoder::fit(&train, FeatureMask::full()).unwrap();
        assert_eq!(enc.scaler.std[0], 1.0);
        assert!(!enc.warnings.is_empty());
    }

    #[test]
    fn simplified_mask_leaves_two_slots() {
        let train = [rec("a", 30.0, Race::OtherMulti), rec("b", 50.0, Race::OtherMulti)];
        let enc = FeatureEncoder::fit(&train, FeatureMask::simplified()).unwrap();
        let fv = enc.encode(&train[0]).unwrap();
        assert_eq!(fv.dimension(), 2);
        assert_eq!(Feature::COUNT - fv.dimension(), 7);
        assert_eq!(fv.get(Feature::Age), 0.0);
        assert_eq!(fv.get(Feature::Bmi), 60.0);
    }

    #[test]
    fn missing_masked_in_feature_errors() {
        let mut r = rec("a", 30.0, Race::OtherMulti);
        let enc = FeatureEncoder::fit(std::slice::from_ref(&r), FeatureMask::full()).unwrap();
        r.waist = None;
        assert!(matches!(
            enc.encode(&r),
            Err(DatasetError::MissingField { field: "waist", .. })
        ));
    }
}
