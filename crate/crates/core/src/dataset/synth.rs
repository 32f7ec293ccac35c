//! Synthetic NHANES/CHARLS-shaped participants.
//!
//! Anthropometrics are drawn first and the laboratory values are generated
//! from them, so the lipid panel is latent but predictable from the nine
//! model features:
//!
//! ```text
//! bmi      = exp(N(ln m, 0.20))            m = 28 (NHANES), 24 (CHARLS), clipped to [15, 60]
//! waist    = 2.3 bmi + 32 + 4 male + N(0, 5)
//! systolic = 105 + 0.45 age + 0.6 (bmi - 28) + N(0, 12)
//! diastolic= 5 + 0.55 systolic + N(0, 8)
//! pulse    = 72 + N(0, 10)
//! fpg      = 88 + 0.15 age + 0.55 (bmi - 28) + N(0, 8), at least 60
//! ln tg    = ln 110 + 0.025 (bmi - 28) + 0.006 (waist - 97) + 0.004 (fpg - 100) + 0.10 male + N(0, 0.38)
//! ln hdl   = ln 52 - 0.012 (bmi - 28) - 0.003 (waist - 97) - 0.001 (fpg - 100) - 0.15 male + N(0, 0.18)
//! ln ins   = ln 10 + 0.04 (bmi - 28) + 0.006 (fpg - 100) + N(0, 0.45)       NHANES only
//! ```
//!
//! `diabetes` is set when fpg ≥ 126 mg/dL or with probability 0.03. Ages are
//! uniform on [18, 80] for NHANES and [45, 85] for CHARLS, whose race is
//! always `OtherMulti` and insulin absent.

use super::{ParticipantRecord, Race, Sex, Source};
use crate::numcore::Rng;

const RACE_WEIGHTS: [f64; 5] = [0.17, 0.10, 0.38, 0.21, 0.14];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub source: Source,
    pub seed: u64,
    /// Fill waist for CHARLS records (NHANES always has it).
    pub charls_waist: bool,
}

impl SynthConfig {
    pub fn new(n: usize, source: Source, seed: u64) -> Self {
        Self {
            n,
            source,
            seed,
            charls_waist: true,
        }
    }
}

pub fn generate(cfg: &SynthConfig) -> Vec<ParticipantRecord> {
    let mut rng = Rng::new(cfg.seed);
    let prefix = match cfg.source {
        Source::Nhanes => "N",
        Source::Charls => "C",
    };
    (0..cfg.n)
        .map(|i| draw(&mut rng, format!("{prefix}{i:06}"), cfg))
        .collect()
}

fn draw(rng: &mut Rng, id: String, cfg: &SynthConfig) -> ParticipantRecord {
    let charls = cfg.source == Source::Charls;
    let mut r = ParticipantRecord::empty(id, cfg.source);
    let age = if charls {
        rng.uniform_in(45.0, 85.0)
    } else {
        rng.uniform_in(18.0, 80.0)
    };
    let sex = if rng.uniform() < 0.5 { Sex::Male } else { Sex::Female };
    let male = if sex == Sex::Male { 1.0 } else { 0.0 };
    let race = if charls { Race::OtherMulti } else { pick_race(rng) };

    let centre: f64 = if charls { 24.0 } else { 28.0 };
    let bmi = (centre.ln() + 0.20 * rng.normal()).exp().clamp(15.0, 60.0);
    let waist = 2.3 * bmi + 32.0 + 4.0 * male + 5.0 * rng.normal();
    let systolic = 105.0 + 0.45 * age + 0.6 * (bmi - 28.0) + 12.0 * rng.normal();
    let diastolic = 5.0 + 0.55 * systolic + 8.0 * rng.normal();
    let pulse = 72.0 + 10.0 * rng.normal();
    let fpg = (88.0 + 0.15 * age + 0.55 * (bmi - 28.0) + 8.0 * rng.normal()).max(60.0);
    let tg = (110f64.ln()
        + 0.025 * (bmi - 28.0)
        + 0.006 * (waist - 97.0)
        + 0.004 * (fpg - 100.0)
        + 0.10 * male
        + 0.38 * rng.normal())
    .exp();
    let hdl = (52f64.ln() - 0.012 * (bmi - 28.0) - 0.003 * (waist - 97.0) - 0.001 * (fpg - 100.0) - 0.15 * male
        + 0.18 * rng.normal())
    .exp();
    let insulin = (10f64.ln() + 0.04 * (bmi - 28.0) + 0.006 * (fpg - 100.0) + 0.45 * rng.normal()).exp();
    let diabetic = fpg >= 126.0 || rng.uniform() < 0.03;
    let height = if male > 0.0 { 175.0 } else { 162.0 } + 7.0 * rng.normal();

    r.age = Some(age.floor());
    r.sex = Some(sex);
    r.race = Some(race);
    r.height = Some(height);
    r.weight = Some(bmi * (height / 100.0).powi(2));
    r.bmi = Some(bmi);
    r.waist = (!charls || cfg.charls_waist).then_some(waist);
    r.pulse = Some(pulse.max(35.0));
    r.systolic = Some(systolic.max(70.0));
    r.diastolic = Some(diastolic.max(40.0));
    r.fpg = Some(fpg);
    r.tg = Some(tg);
    r.hdl = Some(hdl);
    r.insulin = (!charls).then_some(insulin);
    r.diabetes = Some(diabetic);
    r
}

fn pick_race(rng: &mut Rng) -> Race {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (race, w) in Race::ALL.into_iter().zip(RACE_WEIGHTS) {
        acc += w;
        if u < acc {
            return race;
        }
    }
    Race::OtherMulti
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indices::mets_ir;

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig::new(50, Source::Nhanes, 9);
        assert_eq!(generate(&cfg), generate(&cfg));
        assert_ne!(generate(&cfg), generate(&SynthConfig::new(50, Source::Nhanes, 10)));
    }

    #[test]
    fn charls_shape() {
        let recs = generate(&SynthConfig::new(200, Source::Charls, 1));
        assert!(recs
            .iter()
            .all(|r| r.race == Some(Race::OtherMulti) && r.insulin.is_none()));
        assert!(recs.iter().all(|r| r.age.unwrap() >= 45.0));
    }

    #[test]
    fn mets_ir_straddles_threshold() {
        let recs = generate(&SynthConfig::new(2000, Source::Nhanes, 3));
        let vals: Vec<f64> = recs
            .iter()
            .map(|r| {
                mets_ir(r.fpg.unwrap(), r.tg.unwrap(), r.bmi.unwrap(), r.hdl.unwrap())
                    .unwrap()
                    .value
            })
            .collect();
        let pos = vals.iter().filter(|v| **v > 41.33).count() as f64 / vals.len() as f64;
        assert!((0.2..0.8).contains(&pos), "positive rate {pos}");
    }
}
