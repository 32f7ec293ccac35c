use serde::{Deserialize, Serialize};

use super::shapley::{Attribution, Predictor};
use super::ExplainError;
use crate::dataset::{Feature, FeatureMask, FeatureVector};
use crate::harness::{auc, regression_report};
use crate::model::Model;
use crate::numcore::Rng;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMethod {
    Permutation,
    Gain,
    MeanAbsShap,
}

impl ImportanceMethod {
    pub fn name(self) -> &'static str {
        match self {
            ImportanceMethod::Permutation => "permutation",
            ImportanceMethod::Gain => "gain",
            ImportanceMethod::MeanAbsShap => "mean_abs_shap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub feature: Feature,
    pub score: f64,
    /// 1 = most important.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub method: ImportanceMethod,
    /// Slot order; see `rank` for ordering.
    pub scores: Vec<FeatureScore>,
}

impl ImportanceReport {
    fn new(method: ImportanceMethod, features: Vec<Feature>, scores: Vec<f64>) -> Self {
        let mut order: Vec<usize> = (0..features.len()).collect();
        // descending score, ties by slot
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let mut rank = vec![0; features.len()];
        for (r, &i) in order.iter().enumerate() {
            rank[i] = r + 1;
        }
        Self {
            method,
            scores: features
                .into_iter()
                .zip(scores)
                .zip(rank)
                .map(|((feature, score), rank)| FeatureScore { feature, score, rank })
                .collect(),
        }
    }

    pub fn score(&self, f: Feature) -> Option<f64> {
        self.scores.iter().find(|s| s.feature == f).map(|s| s.score)
    }

    pub fn rank(&self, f: Feature) -> Option<usize> {
        self.scores.iter().find(|s| s.feature == f).map(|s| s.rank)
    }

    /// Features from most to least important.
    pub fn ranked(&self) -> Vec<&FeatureScore> {
        let mut v: Vec<&FeatureScore> = self.scores.iter().collect();
        v.sort_by_key(|s| s.rank);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMetric {
    /// Degradation = AUC drop; targets are 0/1.
    Auc,
    /// Degradation = RMSE increase.
    Rmse,
}

fn metric(m: ImportanceMetric, preds: &[f64], targets: &[f64]) -> Result<f64, ExplainError> {
    match m {
        ImportanceMetric::Auc => {
            let labels: Vec<bool> = targets.iter().map(|t| *t > 0.5).collect();
            auc(preds, &labels).map_err(|e| ExplainError::Degenerate(e.to_string()))
        }
        ImportanceMetric::Rmse => {
            let r = regression_report(preds, targets).map_err(|e| ExplainError::Degenerate(e.to_string()))?;
            Ok(-r.rmse)
        }
    }
}

/// Mean metric degradation over `repeats` shuffles of each feature column.
/// Feature `i` uses the stream `Rng::new(seed).fork(slot)`.
pub fn permutation_importance(
    model: &dyn Predictor,
    data: &[FeatureVector],
    targets: &[f64],
    metric_kind: ImportanceMetric,
    repeats: usize,
    seed: u64,
) -> Result<ImportanceReport, ExplainError> {
    if repeats == 0 {
        return Err(ExplainError::Config("repeats must be at least 1".into()));
    }
    if data.is_empty() || data.len() != targets.len() {
        return Err(ExplainError::Config(format!(
            "{} rows for {} targets",
            data.len(),
            targets.len()
        )));
    }
    let mask = data.iter().fold(FeatureMask::full(), |m, v| {
        FeatureMask::from_features(
            &m.features()
                .into_iter()
                .filter(|f| v.mask.contains(*f))
                .collect::<Vec<_>>(),
        )
    });
    let features = mask.features();
    let baseline = metric(metric_kind, &model.predict(data)?, targets)?;
    let base = Rng::new(seed);
    let scores: Vec<Result<f64, ExplainError>> = par::map_slice(&features, |f| {
        let mut rng = base.fork(f.slot() as u64);
        let mut total = 0.0;
        for _ in 0..repeats {
            let perm = rng.permutation(data.len());
            let shuffled: Vec<FeatureVector> = data
                .iter()
                .zip(&perm)
                .map(|(v, &p)| {
                    let mut v = *v;
                    v.set(*f, data[p].get(*f));
                    v
                })
                .collect();
            total += baseline - metric(metric_kind, &model.predict(&shuffled)?, targets)?;
        }
        Ok(total / repeats as f64)
    });
    let scores = scores.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(ImportanceReport::new(ImportanceMethod::Permutation, features, scores))
}

/// Total split gain per feature, normalized to sum 1.
pub fn gain_importance(model: &Model) -> Result<ImportanceReport, ExplainError> {
    let gains = model
        .gain_importance()
        .ok_or_else(|| ExplainError::Unsupported(format!("{} has no split gains", model.kind)))?;
    let total: f64 = gains.iter().sum();
    if !(total > 0.0) {
        return Err(ExplainError::Degenerate(
            "model has no splits with positive gain".into(),
        ));
    }
    Ok(ImportanceReport::new(
        ImportanceMethod::Gain,
        model.mask.features(),
        gains.iter().map(|g| g / total).collect(),
    ))
}

/// Mean |φ| per feature over a set of attributions.
pub fn shap_importance(attributions: &[Attribution]) -> Result<ImportanceReport, ExplainError> {
    let first = attributions
        .first()
        .ok_or_else(|| ExplainError::Config("no attributions".into()))?;
    if attributions.iter().any(|a| a.features != first.features) {
        return Err(ExplainError::Config("attributions cover different feature sets".into()));
    }
    let n = attributions.len() as f64;
    let scores = (0..first.features.len())
        .map(|i| attributions.iter().map(|a| a.values[i].abs()).sum::<f64>() / n)
        .collect();
    Ok(ImportanceReport::new(
        ImportanceMethod::MeanAbsShap,
        first.features.clone(),
        scores,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::{generate, SynthConfig};
    use crate::dataset::{split, Source, SplitConfig, TaskSpec};
    use crate::explain::FnPredictor;
    use crate::harness::{prepare_task, train, TrainConfig};
    use crate::model::ModelKind;
    use crate::trees::GbdtConfig;

    fn rows(n: usize, seed: u64) -> (Vec<FeatureVector>, Vec<f64>) {
        let mut rng = Rng::new(seed);
        let x: Vec<FeatureVector> = (0..n)
            .map(|_| {
                let mut v = FeatureVector {
                    values: [0.0; 9],
                    mask: FeatureMask::full(),
                };
                for f in Feature::ALL {
                    v.set(f, rng.normal());
                }
                v
            })
            .collect();
        let y = x.iter().map(|v| v.get(Feature::Age)).collect();
        (x, y)
    }

    #[test]
    fn signal_feature_ranks_first() {
        let (x, y) = rows(300, 1);
        let model = FnPredictor(|v: &FeatureVector| v.get(Feature::Age));
        let r = permutation_importance(&model, &x, &y, ImportanceMetric::Rmse, 3, 7).unwrap();
        assert_eq!(r.rank(Feature::Age), Some(1));
        let mut ranks: Vec<usize> = r.scores.iter().map(|s| s.rank).collect();
        ranks.sort_unstable();
        assert_eq!(ranks, (1..=9).collect::<Vec<_>>());
    }

    #[test]
    fn null_feature_scores_near_zero() {
        let (x, y) = rows(400, 2);
        // model reads age plus a weak dependence on bmi; target ignores bmi
        let model = FnPredictor(|v: &FeatureVector| v.get(Feature::Age) + 0.0 * v.get(Feature::Bmi));
        let r = permutation_importance(&model, &x, &y, ImportanceMetric::Rmse, 5, 3).unwrap();
        assert_eq!(r.score(Feature::Bmi), Some(0.0));
        let labels: Vec<f64> = y.iter().map(|v| f64::from(u8::from(*v > 0.0))).collect();
        let r = permutation_importance(&model, &x, &labels, ImportanceMetric::Auc, 5, 3).unwrap();
        assert!(r.score(Feature::Age).unwrap() > 0.3);
        assert!(r.score(Feature::Waist).unwrap().abs() < 1e-12);
    }

    #[test]
    fn permutation_is_seeded() {
        let (x, y) = rows(100, 4);
        let model = FnPredictor(|v: &FeatureVector| v.get(Feature::Age) * v.get(Feature::Fpg));
        let a = permutation_importance(&model, &x, &y, ImportanceMetric::Rmse, 2, 9).unwrap();
        let b = permutation_importance(&model, &x, &y, ImportanceMetric::Rmse, 2, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn permutation_errors() {
        let (x, y) = rows(20, 5);
        let model = FnPredictor(|v: &FeatureVector| v.get(Feature::Age));
        assert!(matches!(
            permutation_importance(&model, &x, &y, ImportanceMetric::Rmse, 0, 0),
            Err(ExplainError::Config(_))
        ));
        assert!(matches!(
            permutation_importance(&model, &x, &[1.0; 20], ImportanceMetric::Auc, 1, 0),
            Err(ExplainError::Degenerate(_))
        ));
    }

    fn trained(kind: ModelKind, n_trees: usize, depth: usize) -> Model {
        let recs = generate(&SynthConfig::new(400, Source::Nhanes, 8));
        let splits = split(&recs, &SplitConfig::new(1)).unwrap().partition(&recs);
        let d = prepare_task(&splits, TaskSpec::MetsClass, FeatureMask::full()).unwrap();
        let mut cfg = TrainConfig::new(TaskSpec::MetsClass, kind);
        cfg.gbdt = Some(GbdtConfig {
            n_trees,
            max_depth: depth,
            early_stopping: None,
            ..GbdtConfig::default()
        });
        cfg.forest.n_trees = 5;
        cfg.max_epochs = 1;
        train(&d, &cfg).unwrap().0
    }

    #[test]
    fn gain_sums_to_one() {
        for kind in [ModelKind::Xgboost, ModelKind::RandomForest] {
            let r = gain_importance(&trained(kind, 20, 4)).unwrap();
            let total: f64 = r.scores.iter().map(|s| s.score).sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(r.scores.iter().all(|s| s.score >= 0.0));
        }
    }

    #[test]
    fn stump_puts_everything_on_one_feature() {
        let r = gain_importance(&trained(ModelKind::Catboost, 1, 1)).unwrap();
        let top = r.ranked()[0];
        assert_eq!(top.score, 1.0);
        assert!(r
            .scores
            .iter()
            .filter(|s| s.feature != top.feature)
            .all(|s| s.score == 0.0));
    }

    #[test]
    fn gain_rejects_nets() {
        assert!(matches!(
            gain_importance(&trained(ModelKind::Linear, 1, 1)),
            Err(ExplainError::Unsupported(_))
        ));
    }
}
