use serde::{Deserialize, Serialize};

use super::ExplainError;
use crate::dataset::{Feature, FeatureMask, FeatureVector};
use crate::model::Model;
use crate::numcore::Rng;
use crate::par;

/// Anything that maps feature vectors to one output each.
pub trait Predictor: Sync {
    fn predict(&self, x: &[FeatureVector]) -> Result<Vec<f64>, ExplainError>;
}

/// Adapts a per-row closure.
pub struct FnPredictor<F>(pub F);

impl<F: Fn(&FeatureVector) -> f64 + Sync> Predictor for FnPredictor<F> {
    fn predict(&self, x: &[FeatureVector]) -> Result<Vec<f64>, ExplainError> {
        Ok(x.iter().map(&self.0).collect())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputUnits {
    /// Probability for classifiers, target units for regression.
    #[default]
    Probability,
    /// Log-odds for classifiers; same as probability mode for regression.
    Logit,
}

pub struct ModelOutput<'a> {
    pub model: &'a Model,
    pub units: OutputUnits,
}

impl Predictor for ModelOutput<'_> {
    fn predict(&self, x: &[FeatureVector]) -> Result<Vec<f64>, ExplainError> {
        let r = match self.units {
            OutputUnits::Probability => self.model.predict(x),
            OutputUnits::Logit => self.model.predict_raw(x),
        };
        r.map_err(|e| ExplainError::Model(e.to_string()))
    }
}

impl Predictor for Model {
    fn predict(&self, x: &[FeatureVector]) -> Result<Vec<f64>, ExplainError> {
        Model::predict(self, x).map_err(|e| ExplainError::Model(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapleyConfig {
    pub n_permutations: usize,
    pub background_size: usize,
    pub seed: u64,
}

impl Default for ShapleyConfig {
    fn default() -> Self {
        Self {
            n_permutations: 256,
            background_size: 512,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub id: String,
    pub features: Vec<Feature>,
    /// φ per feature, in model-output units.
    pub values: Vec<f64>,
    /// Monte Carlo standard error of each φ.
    pub std_errors: Vec<f64>,
    /// Mean model output over the background.
    pub base_value: f64,
    pub prediction: f64,
    /// Standard error of `Σφ + base − prediction` implied by sampling one
    /// background row per permutation.
    pub efficiency_std_error: f64,
    pub n_permutations: usize,
}

impl Attribution {
    pub fn get(&self, f: Feature) -> Option<f64> {
        self.features.iter().position(|x| *x == f).map(|i| self.values[i])
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// `n` rows drawn without replacement (all rows when fewer).
pub fn sample_background(vectors: &[FeatureVector], n: usize, seed: u64) -> Vec<FeatureVector> {
    let mut idx = Rng::new(seed).permutation(vectors.len());
    idx.truncate(n.min(vectors.len()));
    idx.sort_unstable();
    idx.into_iter().map(|i| vectors[i]).collect()
}

/// Permutation-sampling Shapley estimate for one instance. Each sample
/// draws a feature ordering and one background row, then switches features
/// from the background row to the instance in that order; φᵢ is the mean
/// output change when feature i switches. Features are those present in
/// the instance and every background row.
pub fn shapley_sampling(
    model: &dyn Predictor,
    background: &[FeatureVector],
    instance: &FeatureVector,
    id: &str,
    n_permutations: usize,
    seed: u64,
) -> Result<Attribution, ExplainError> {
    if background.is_empty() {
        return Err(ExplainError::Config("background sample is empty".into()));
    }
    if n_permutations == 0 {
        return Err(ExplainError::Config("n_permutations must be at least 1".into()));
    }
    let mask = background.iter().fold(instance.mask, |m, b| {
        FeatureMask::from_features(
            &m.features()
                .into_iter()
                .filter(|f| b.mask.contains(*f))
                .collect::<Vec<_>>(),
        )
    });
    let features = mask.features();
    let d = features.len();
    let base_preds = model.predict(background)?;
    let base_value = base_preds.iter().sum::<f64>() / base_preds.len() as f64;
    let prediction = model.predict(std::slice::from_ref(instance))?[0];

    let mut rng = Rng::new(seed);
    // d + 1 rows per permutation: the background row, then one more
    // instance feature switched in at each step
    let mut rows = Vec::with_capacity(n_permutations * (d + 1));
    let mut orders = Vec::with_capacity(n_permutations);
    for _ in 0..n_permutations {
        let order = rng.permutation(d);
        let mut z = background[rng.below(background.len())];
        z.mask = mask;
        rows.push(z);
        for &j in &order {
            let f = features[j];
            z.set(f, instance.get(f));
            rows.push(z);
        }
        orders.push(order);
    }
    let out = model.predict(&rows)?;
    let mut contrib = vec![Vec::with_capacity(n_permutations); d];
    let mut starts = Vec::with_capacity(n_permutations);
    for (k, order) in orders.iter().enumerate() {
        let o = &out[k * (d + 1)..(k + 1) * (d + 1)];
        starts.push(o[0]);
        for (step, &j) in order.iter().enumerate() {
            contrib[j].push(o[step + 1] - o[step]);
        }
    }
    let n = n_permutations as f64;
    let (values, std_errors) = contrib
        .iter()
        .map(|c| {
            let (m, s) = mean_sd(c);
            (m, s / n.sqrt())
        })
        .unzip();
    let (_, start_sd) = mean_sd(&starts);
    Ok(Attribution {
        id: id.to_string(),
        features,
        values,
        std_errors,
        base_value,
        prediction,
        efficiency_std_error: start_sd / n.sqrt(),
        n_permutations,
    })
}

/// Attributions for many instances; instance `i` uses stream `seed.fork(i)`
/// so results do not depend on scheduling.
pub fn explain_instances(
    model: &dyn Predictor,
    background: &[FeatureVector],
    instances: &[(String, FeatureVector)],
    cfg: &ShapleyConfig,
) -> Result<Vec<Attribution>, ExplainError> {
    let base = Rng::new(cfg.seed);
    par::map_range(instances.len(), |i| {
        let (id, x) = &instances[i];
        shapley_sampling(
            model,
            background,
            x,
            id,
            cfg.n_permutations,
            base.fork(i as u64).next_u64(),
        )
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependencePoint {
    pub id: String,
    /// Raw feature value (original units or category code).
    pub value: f64,
    pub shap: f64,
}

/// One (value, φ) point per attributed instance.
pub fn dependence_export(
    attributions: &[Attribution],
    instances: &[FeatureVector],
    feature: Feature,
) -> Result<Vec<DependencePoint>, ExplainError> {
    if attributions.len() != instances.len() {
        return Err(ExplainError::Config(format!(
            "{} attributions for {} instances",
            attributions.len(),
            instances.len()
        )));
    }
    attributions
        .iter()
        .zip(instances)
        .map(|(a, x)| {
            let shap = a
                .get(feature)
                .ok_or_else(|| ExplainError::UnknownFeature(feature.name().into()))?;
            Ok(DependencePoint {
                id: a.id.clone(),
                value: x.get(feature),
                shap,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_of(vals: [f64; 9]) -> FeatureVector {
        FeatureVector {
            values: vals,
            mask: FeatureMask::full(),
        }
    }

    fn random_rows(n: usize, seed: u64) -> Vec<FeatureVector> {
        let mut rng = Rng::new(seed);
        (0..n)
            .map(|_| {
                let mut v = [0.0; 9];
                for x in v.iter_mut() {
                    *x = rng.normal() * 2.0 + 1.0;
                }
                vec_of(v)
            })
            .collect()
    }

    const A: [f64; 9] = [0.5, -1.0, 2.0, 0.0, 1.5, -0.3, 0.8, 0.0, 3.0];

    fn additive(x: &FeatureVector) -> f64 {
        x.values.iter().zip(A).map(|(v, a)| v * a).sum::<f64>() + 4.0
    }

    #[test]
    fn additive_matches_closed_form() {
        let bg = random_rows(200, 1);
        let x = random_rows(1, 2)[0];
        let a = shapley_sampling(&FnPredictor(additive), &bg, &x, "x", 1024, 3).unwrap();
        for (i, f) in Feature::ALL.iter().enumerate() {
            let mean_bg = bg.iter().map(|b| b.get(*f)).sum::<f64>() / bg.len() as f64;
            let exact = A[i] * (x.get(*f) - mean_bg);
            let se = a.std_errors[i].max(1e-12);
            assert!(
                (a.values[i] - exact).abs() < 3.0 * se + 1e-9,
                "{f:?}: {} vs {exact} (se {se})",
                a.values[i]
            );
        }
    }

    #[test]
    fn constant_model_gives_zero() {
        let bg = random_rows(20, 4);
        let a = shapley_sampling(&FnPredictor(|_: &FeatureVector| 7.0), &bg, &bg[0], "c", 32, 1).unwrap();
        assert!(a.values.iter().all(|v| *v == 0.0));
        assert_eq!(a.base_value, 7.0);
    }

    #[test]
    fn ignored_feature_is_exactly_zero() {
        let bg = random_rows(50, 5);
        let f = |x: &FeatureVector| (x.get(Feature::Bmi) * x.get(Feature::Fpg)).sin() + x.get(Feature::Age).powi(2);
        let a = shapley_sampling(&FnPredictor(f), &bg, &random_rows(1, 6)[0], "d", 200, 2).unwrap();
        for feat in [Feature::Sex, Feature::Race, Feature::Waist, Feature::Pulse] {
            assert_eq!(a.get(feat), Some(0.0));
        }
    }

    #[test]
    fn efficiency_within_reported_error() {
        let bg = random_rows(300, 7);
        let f = |x: &FeatureVector| {
            (x.get(Feature::Bmi) - 1.0).max(0.0) * x.get(Feature::Waist) + x.get(Feature::Age).tanh()
        };
        for (k, x) in random_rows(10, 8).iter().enumerate() {
            let a = shapley_sampling(&FnPredictor(f), &bg, x, "e", 256, k as u64).unwrap();
            let gap = (a.sum() + a.base_value - a.prediction).abs();
            assert!(
                gap <= 3.0 * a.efficiency_std_error + 1e-9,
                "gap {gap} se {}",
                a.efficiency_std_error
            );
        }
    }

    #[test]
    fn symmetric_features_agree() {
        let mut bg = random_rows(200, 9);
        for b in &mut bg {
            let v = b.get(Feature::Systolic);
            b.set(Feature::Diastolic, v);
        }
        let mut x = random_rows(1, 10)[0];
        x.set(Feature::Diastolic, x.get(Feature::Systolic));
        let f = |x: &FeatureVector| {
            (x.get(Feature::Systolic) * x.get(Feature::Diastolic)).tanh()
                + 0.3 * x.get(Feature::Systolic)
                + 0.3 * x.get(Feature::Diastolic)
        };
        let a = shapley_sampling(&FnPredictor(f), &bg, &x, "s", 1024, 11).unwrap();
        let (i, j) = (Feature::Systolic.slot(), Feature::Diastolic.slot());
        let se = (a.std_errors[i].powi(2) + a.std_errors[j].powi(2)).sqrt();
        assert!((a.values[i] - a.values[j]).abs() < 3.0 * se + 1e-12);
    }

    #[test]
    fn seeded_and_parallel_safe() {
        let bg = random_rows(40, 12);
        let inst: Vec<(String, FeatureVector)> = random_rows(6, 13)
            .into_iter()
            .enumerate()
            .map(|(i, v)| (i.to_string(), v))
            .collect();
        let cfg = ShapleyConfig {
            n_permutations: 50,
            ..Default::default()
        };
        let a = explain_instances(&FnPredictor(additive), &bg, &inst, &cfg).unwrap();
        let b = explain_instances(&FnPredictor(additive), &bg, &inst, &cfg).unwrap();
        assert_eq!(a, b);
        let single = shapley_sampling(
            &FnPredictor(additive),
            &bg,
            &inst[3].1,
            "3",
            50,
            Rng::new(0).fork(3).next_u64(),
        )
        .unwrap();
        assert_eq!(a[3], single);
    }

    #[test]
    fn masked_instance_limits_features() {
        let bg = random_rows(10, 14);
        let mut x = random_rows(1, 15)[0];
        x.mask = FeatureMask::simplified();
        let a = shapley_sampling(&FnPredictor(additive), &bg, &x, "m", 8, 0).unwrap();
        assert_eq!(a.features, FeatureMask::simplified().features());
    }

    #[test]
    fn dependence_rows_and_errors() {
        let bg = random_rows(30, 16);
        let xs = random_rows(5, 17);
        let atts: Vec<Attribution> = xs
            .iter()
            .map(|x| shapley_sampling(&FnPredictor(|_: &FeatureVector| 1.0), &bg, x, "k", 4, 0).unwrap())
            .collect();
        let pts = dependence_export(&atts, &xs, Feature::Waist).unwrap();
        assert_eq!(pts.len(), xs.len());
        assert!(pts.iter().all(|p| p.shap == 0.0));
        let mut narrow = xs.clone();
        for v in &mut narrow {
            v.mask = FeatureMask::simplified();
        }
        let atts: Vec<Attribution> = narrow
            .iter()
            .map(|x| shapley_sampling(&FnPredictor(additive), &bg, x, "k", 4, 0).unwrap())
            .collect();
        assert!(matches!(
            dependence_export(&atts, &narrow, Feature::Waist),
            Err(ExplainError::UnknownFeature(_))
        ));
    }

    #[test]
    fn step_in_waist_changes_sign() {
        let mut rng = Rng::new(18);
        let rows: Vec<FeatureVector> = (0..120)
            .map(|_| {
                let mut v = [1.0; 9];
                v[Feature::Waist.slot()] = rng.uniform_in(70.0, 120.0);
                vec_of(v)
            })
            .collect();
        let f = |x: &FeatureVector| if x.get(Feature::Waist) > 95.0 { 0.8 } else { 0.2 };
        let inst: Vec<(String, FeatureVector)> = rows.iter().enumerate().map(|(i, v)| (i.to_string(), *v)).collect();
        let atts = explain_instances(
            &FnPredictor(f),
            &rows,
            &inst,
            &ShapleyConfig {
                n_permutations: 64,
                ..Default::default()
            },
        )
        .unwrap();
        let pts = dependence_export(&atts, &rows, Feature::Waist).unwrap();
        let mean = |above: bool| {
            let s: Vec<f64> = pts
                .iter()
                .filter(|p| (p.value > 95.0) == above)
                .map(|p| p.shap)
                .collect();
            s.iter().sum::<f64>() / s.len() as f64
        };
        assert!(mean(false) < 0.0 && mean(true) > 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = random_rows(1, 19)[0];
        assert!(shapley_sampling(&FnPredictor(additive), &[], &x, "x", 4, 0).is_err());
        assert!(shapley_sampling(&FnPredictor(additive), &[x], &x, "x", 0, 0).is_err());
    }
}
