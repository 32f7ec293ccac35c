use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{derive_target, DatasetError, ParticipantRecord, Source, TaskSpec};
use crate::numcore::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Train,
    Val,
    Test,
    External,
}

impl SplitKind {
    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Val => "val",
            SplitKind::Test => "test",
            SplitKind::External => "external",
        }
    }
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub ratios: (f64, f64, f64),
    pub seed: u64,
    /// Split each class of this task separately (off by default).
    pub stratify: Option<TaskSpec>,
}

impl SplitConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            ratios: (0.6, 0.2, 0.2),
            seed,
            stratify: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub assignments: BTreeMap<String, SplitKind>,
}

/// Records partitioned by split, each in input order.
#[derive(Debug, Clone, Default)]
pub struct Splits {
    pub train: Vec<ParticipantRecord>,
    pub val: Vec<ParticipantRecord>,
    pub test: Vec<ParticipantRecord>,
    pub external: Vec<ParticipantRecord>,
}

impl SplitAssignment {
    pub fn get(&self, id: &str) -> Option<SplitKind> {
        self.assignments.get(id).copied()
    }

    pub fn count(&self, kind: SplitKind) -> usize {
        self.assignments.values().filter(|k| **k == kind).count()
    }

    pub fn partition(&self, records: &[ParticipantRecord]) -> Splits {
        let mut s = Splits::default();
        for r in records {
            match self.get(&r.id) {
                Some(SplitKind::Train) => s.train.push(r.clone()),
                Some(SplitKind::Val) => s.val.push(r.clone()),
                Some(SplitKind::Test) => s.test.push(r.clone()),
                Some(SplitKind::External) => s.external.push(r.clone()),
                None => {}
            }
        }
        s
    }

    /// `id,split` manifest for audit.
    pub fn write_manifest(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record(["id", "split"])?;
        for (id, kind) in &self.assignments {
            w.write_record([id.as_str(), kind.name()])?;
        }
        w.flush().map_err(|e| DatasetError::Io {
            path: path.as_ref().display().to_string(),
            source: e,
        })?;
        Ok(())
    }
}

/// Sizes for `n` rows: ⌈r₀·n⌉ train, round(r₁·n) val, remainder test.
fn sizes(n: usize, ratios: (f64, f64, f64)) -> (usize, usize, usize) {
    let nf = n as f64;
    let train = ((ratios.0 * nf) - 1e-9).ceil().max(0.0) as usize;
    let train = train.min(n);
    let val = ((ratios.1 * nf).round() as usize).min(n - train);
    (train, val, n - train - val)
}

/// Seeded random split of NHANES records; CHARLS records are always external.
pub fn split(records: &[ParticipantRecord], config: &SplitConfig) -> Result<SplitAssignment, DatasetError> {
    if records.is_empty() {
        return Err(DatasetError::Empty("no records to split".into()));
    }
    let (a, b, c) = config.ratios;
    if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(DatasetError::Config(format!(
            "split ratios ({a}, {b}, {c}) must lie in [0, 1] and sum to 1"
        )));
    }
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(DatasetError::Config(format!("duplicate record id `{}`", r.id)));
        }
    }

    let mut assignments = BTreeMap::new();
    let internal: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.source == Source::Nhanes)
        .map(|(i, _)| i)
        .collect();
    for r in records.iter().filter(|r| r.source == Source::Charls) {
        assignments.insert(r.id.clone(), SplitKind::External);
    }

    let groups: Vec<Vec<usize>> = match config.stratify {
        None => vec![internal],
        Some(task) => {
            let mut pos = Vec::new();
            let mut neg = Vec::new();
            for i in internal {
                let y = derive_target(&records[i], task)?.as_f64();
                if y > 0.5 {
                    pos.push(i);
                } else {
                    neg.push(i);
                }
            }
            vec![neg, pos]
        }
    };

    let mut rng = Rng::new(config.seed);
    for mut group in groups {
        rng.shuffle(&mut group);
        let (tr, va, _) = sizes(group.len(), config.ratios);
        for (k, i) in group.into_iter().enumerate() {
            let kind = if k < tr {
                SplitKind::Train
            } else if k < tr + va {
                SplitKind::Val
            } else {
                SplitKind::Test
            };
            assignments.insert(records[i].id.clone(), kind);
        }
    }
    Ok(SplitAssignment {
        seed: config.seed,
        assignments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn recs(n: usize) -> Vec<ParticipantRecord> {
        (0..n)
            .map(|i| ParticipantRecord::empty(format!("p{i}"), Source::Nhanes))
            .collect()
    }

    #[test]
    fn cohort_sizes() {
        assert_eq!(sizes(22_008, (0.6, 0.2, 0.2)), (13_205, 4_402, 4_401));
        assert_eq!(sizes(10, (0.6, 0.2, 0.2)), (6, 2, 2));
    }

    #[test]
    fn full_cohort_split_matches_table_counts() {
        let a = split(&recs(22_008), &SplitConfig::new(1)).unwrap();
        assert_eq!(a.count(SplitKind::Train), 13_205);
        assert_eq!(a.count(SplitKind::Val), 4_402);
        assert_eq!(a.count(SplitKind::Test), 4_401);
    }

    #[test]
    fn deterministic_per_seed() {
        let r = recs(500);
        assert_eq!(
            split(&r, &SplitConfig::new(9)).unwrap(),
            split(&r, &SplitConfig::new(9)).unwrap()
        );
        assert_ne!(
            split(&r, &SplitConfig::new(9)).unwrap(),
            split(&r, &SplitConfig::new(10)).unwrap()
        );
    }

    #[test]
    fn charls_is_external() {
        let mut r = recs(10);
        r.push(ParticipantRecord::empty("c1", Source::Charls));
        let a = split(&r, &SplitConfig::new(3)).unwrap();
        assert_eq!(a.get("c1"), Some(SplitKind::External));
        assert_eq!(a.count(SplitKind::Train), 6);
    }

    #[test]
    fn bad_ratios_and_empty_input() {
        let mut c = SplitConfig::new(1);
        c.ratios = (0.5, 0.5, 0.5);
        assert!(matches!(split(&recs(5), &c), Err(DatasetError::Config(_))));
        assert!(split(&[], &SplitConfig::new(1)).is_err());
    }

    #[test]
    fn manifest_lists_every_record() {
        let a = split(&recs(7), &SplitConfig::new(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        a.write_manifest(&p).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(text.lines().count(), 8);
        assert!(text.starts_with("id,split\n"));
    }

    proptest! {
        #[test]
        fn disjoint_and_exhaustive(n in 1usize..400, seed in any::<u64>()) {
            let r = recs(n);
            let a = split(&r, &SplitConfig::new(seed)).unwrap();
            prop_assert_eq!(a.assignments.len(), n);
            let s = a.partition(&r);
            prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), n);
            let (tr, va, te) = sizes(n, (0.6, 0.2, 0.2));
            prop_assert_eq!((s.train.len(), s.val.len(), s.test.len()), (tr, va, te));
        }
    }
}
