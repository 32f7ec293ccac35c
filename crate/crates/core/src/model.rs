//! A trained model of any family, bundled with the encoder that maps
//! participant records to its inputs.
//!
//! File layout: magic `IRKM`, little-endian u32 format version, u64 header
//! length, a JSON header, then the body (JSON for tree models, the binary
//! net format for neural models).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{FeatureEncoder, FeatureMask, FeatureVector, ParticipantRecord, TaskSpec};
use crate::nets::{NetKind, NetModel};
use crate::trees::{ForestModel, GbdtModel, Table};
use crate::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"IRKM";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Logistic regression for classification, linear regression otherwise.
    Linear,
    RandomForest,
    /// Histogram boosting with one-vs-rest categorical splits.
    Xgboost,
    /// Boosting with ordered target statistics for categoricals.
    Catboost,
    Mlp,
    TabTransformer,
    Tabkanet,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::Linear,
        ModelKind::RandomForest,
        ModelKind::Xgboost,
        ModelKind::Catboost,
        ModelKind::Mlp,
        ModelKind::TabTransformer,
        ModelKind::Tabkanet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::RandomForest => "random_forest",
            ModelKind::Xgboost => "xgboost",
            ModelKind::Catboost => "catboost",
            ModelKind::Mlp => "mlp",
            ModelKind::TabTransformer => "tab_transformer",
            ModelKind::Tabkanet => "tabkanet",
        }
    }

    /// Row label used in report tables.
    pub fn display_name(self, task: TaskSpec) -> &'static str {
        match self {
            ModelKind::Linear if task.is_classification() => "Logistic Regression",
            ModelKind::Linear => "Linear Regression",
            ModelKind::RandomForest => "Random Forest",
            ModelKind::Xgboost => "XGBoost",
            ModelKind::Catboost => "CatBoost",
            ModelKind::Mlp => "MLP",
            ModelKind::TabTransformer => "TabTransformer",
            ModelKind::Tabkanet => "TabKANet",
        }
    }

    pub fn net_kind(self) -> Option<NetKind> {
        match self {
            ModelKind::Linear => Some(NetKind::Linear),
            ModelKind::Mlp => Some(NetKind::Mlp),
            ModelKind::TabTransformer => Some(NetKind::TabTransformer),
            ModelKind::Tabkanet => Some(NetKind::TabKanet),
            _ => None,
        }
    }

    pub fn is_tree(self) -> bool {
        matches!(self, ModelKind::RandomForest | ModelKind::Xgboost | ModelKind::Catboost)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        match key.as_str() {
            "logistic" | "logistic_regression" | "linear_regression" => Ok(ModelKind::Linear),
            "rf" => Ok(ModelKind::RandomForest),
            "tab_kanet" => Ok(ModelKind::Tabkanet),
            "tabtransformer" => Ok(ModelKind::TabTransformer),
            _ => ModelKind::ALL
                .into_iter()
                .find(|k| k.name() == key)
                .ok_or_else(|| format!("unknown model `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelBody {
    Gbdt(GbdtModel),
    Forest(ForestModel),
    Net(NetModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub kind: ModelKind,
    pub task: TaskSpec,
    pub mask: FeatureMask,
    pub encoder: FeatureEncoder,
    pub body: ModelBody,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    task: TaskSpec,
    mask: FeatureMask,
    encoder: FeatureEncoder,
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

impl Model {
    fn table(&self, vectors: &[FeatureVector]) -> Result<Table> {
        if let Some(v) = vectors.iter().find(|v| !self.mask.is_subset_of(v.mask)) {
            return Err(Error::Model(format!(
                "vector carries features `{}` but the model needs `{}`",
                v.mask, self.mask
            )));
        }
        Ok(Table::from_vectors(vectors, self.mask))
    }

    /// Positive-class probability for classification tasks, the METS-IR
    /// value for regression.
    pub fn predict(&self, vectors: &[FeatureVector]) -> Result<Vec<f64>> {
        if vectors.is_empty() {
            return Ok(Vec::new());
        }
        Ok(match &self.body {
            ModelBody::Gbdt(m) => m.predict_table(&self.table(vectors)?)?,
            ModelBody::Forest(m) => m.predict_table(&self.table(vectors)?)?,
            ModelBody::Net(m) => m.predict(vectors)?,
        })
    }

    /// Like [`Model::predict`] but in logit units for classifiers.
    pub fn predict_raw(&self, vectors: &[FeatureVector]) -> Result<Vec<f64>> {
        let p = self.predict(vectors)?;
        if !self.task.is_classification() {
            return Ok(p);
        }
        if let ModelBody::Gbdt(m) = &self.body {
            let t = self.table(vectors)?;
            return Ok((0..t.n_rows())
                .map(|r| m.raw_score(&t.row(r)))
                .collect::<std::result::Result<_, _>>()?);
        }
        Ok(p.into_iter().map(logit).collect())
    }

    pub fn encode(&self, records: &[ParticipantRecord]) -> Result<Vec<FeatureVector>> {
        records
            .iter()
            .map(|r| self.encoder.encode_masked(r, self.mask).map_err(Error::from))
            .collect()
    }

    pub fn predict_records(&self, records: &[ParticipantRecord]) -> Result<Vec<f64>> {
        self.predict(&self.encode(records)?)
    }

    /// Total split gain per masked-in feature (slot order), unnormalized;
    /// `None` for neural models.
    pub fn gain_importance(&self) -> Option<Vec<f64>> {
        match &self.body {
            ModelBody::Gbdt(m) => Some(m.gain_importance()),
            ModelBody::Forest(m) => Some(m.gain_importance()),
            ModelBody::Net(_) => None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            kind: self.kind,
            task: self.task,
            mask: self.mask,
            encoder: self.encoder.clone(),
        })
        .expect("serializable header");
        let body = match &self.body {
            ModelBody::Gbdt(m) => serde_json::to_vec(m).expect("serializable"),
            ModelBody::Forest(m) => serde_json::to_vec(m).expect("serializable"),
            ModelBody::Net(m) => m.to_bytes(),
        };
        let mut out = Vec::with_capacity(16 + header.len() + body.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Model(format!("not a model file: {m}"));
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != MODEL_FORMAT_VERSION {
            return Err(Error::Model(format!("unsupported model format version {version}")));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let end = 16usize
            .checked_add(len)
            .filter(|e| *e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let h: Header = serde_json::from_slice(&bytes[16..end])?;
        let body = &bytes[end..];
        let body = match h.kind {
            ModelKind::Xgboost | ModelKind::Catboost => ModelBody::Gbdt(serde_json::from_slice(body)?),
            ModelKind::RandomForest => ModelBody::Forest(serde_json::from_slice(body)?),
            _ => ModelBody::Net(NetModel::from_bytes(body)?),
        };
        Ok(Self {
            kind: h.kind,
            task: h.task,
            mask: h.mask,
            encoder: h.encoder,
            body,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Hex SHA-256 of the serialized model.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::{generate, SynthConfig};
    use crate::dataset::{split, Source, SplitConfig};
    use crate::harness::{prepare_task, train, TaskData, TrainConfig};
    use crate::trees::GbdtConfig;

    fn data(task: TaskSpec) -> TaskData {
        let recs = generate(&SynthConfig::new(300, Source::Nhanes, 21));
        let splits = split(&recs, &SplitConfig::new(2)).unwrap().partition(&recs);
        prepare_task(&splits, task, FeatureMask::full()).unwrap()
    }

    fn quick(task: TaskSpec, kind: ModelKind) -> TrainConfig {
        let mut c = TrainConfig::new(task, kind);
        c.max_epochs = 2;
        c.net.dim = 8;
        c.net.heads = 2;
        c.net.layers = 1;
        c.forest.n_trees = 5;
        c.gbdt = Some(GbdtConfig {
            n_trees: 10,
            max_depth: 3,
            ..GbdtConfig::default()
        });
        c
    }

    #[test]
    fn every_kind_round_trips() {
        for task in [TaskSpec::MetsClass, TaskSpec::MetsRegress] {
            let d = data(task);
            for kind in ModelKind::ALL {
                let (m, _) = train(&d, &quick(task, kind)).unwrap();
                let back = Model::from_bytes(&m.to_bytes()).unwrap();
                assert_eq!(back, m, "{kind}");
                assert_eq!(back.fingerprint(), m.fingerprint());
                let p = m.predict(&d.test.vectors).unwrap();
                assert_eq!(back.predict(&d.test.vectors).unwrap(), p);
                assert!(p.iter().all(|v| v.is_finite()));
                if task.is_classification() {
                    assert!(p.iter().all(|v| (0.0..=1.0).contains(v)), "{kind}");
                }
            }
        }
    }

    #[test]
    fn training_is_reproducible() {
        let d = data(TaskSpec::MetsClass);
        for kind in [ModelKind::Catboost, ModelKind::RandomForest, ModelKind::Tabkanet] {
            let a = train(&d, &quick(TaskSpec::MetsClass, kind)).unwrap().0;
            let b = train(&d, &quick(TaskSpec::MetsClass, kind)).unwrap().0;
            assert_eq!(a.fingerprint(), b.fingerprint(), "{kind}");
        }
    }

    #[test]
    fn raw_output_is_logit_of_probability() {
        let d = data(TaskSpec::MetsClass);
        for kind in [ModelKind::Xgboost, ModelKind::Mlp] {
            let (m, _) = train(&d, &quick(TaskSpec::MetsClass, kind)).unwrap();
            let p = m.predict(&d.test.vectors[..5]).unwrap();
            let z = m.predict_raw(&d.test.vectors[..5]).unwrap();
            for (p, z) in p.iter().zip(&z) {
                assert!((1.0 / (1.0 + (-z).exp()) - p).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_damaged_files_and_narrow_inputs() {
        let d = data(TaskSpec::MetsClass);
        let (m, _) = train(&d, &quick(TaskSpec::MetsClass, ModelKind::Xgboost)).unwrap();
        let bytes = m.to_bytes();
        assert!(Model::from_bytes(&bytes[..10]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Model::from_bytes(&bad).is_err());
        let mut v = d.test.vectors[0];
        v.mask = FeatureMask::simplified();
        assert!(m.predict(&[v]).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.irkm");
        m.save(&path).unwrap();
        assert_eq!(Model::load(&path).unwrap(), m);
        assert!(Model::load(dir.path().join("missing")).is_err());
    }

    #[test]
    fn kind_names_parse() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>(), Ok(k));
        }
        assert_eq!("TabKANet".parse::<ModelKind>(), Ok(ModelKind::Tabkanet));
        assert_eq!("logistic".parse::<ModelKind>(), Ok(ModelKind::Linear));
        assert!("svm".parse::<ModelKind>().is_err());
    }
}
