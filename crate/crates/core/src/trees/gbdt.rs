use serde::{Deserialize, Serialize};

use super::tree::{Prepared, TreeFit, TreeParams};
use super::{ordered_target_encode, sigmoid, Binning, Table, Tree, TreeError};
use crate::par;

pub const GBDT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Binary log-loss on 0/1 labels; raw scores are logits.
    Logistic,
    Squared,
}

/// Handling of categorical columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CatMode {
    /// One-vs-rest splits on the raw codes.
    OneHot,
    /// Ordered target statistics, then threshold splits.
    OrderedTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub min_leaf: usize,
    pub loss: Loss,
    pub cat_mode: CatMode,
    /// Stop after this many rounds without validation improvement.
    pub early_stopping: Option<usize>,
    pub binning: Binning,
    pub seed: u64,
    /// Backtrack (halve the new tree) while a round would raise training loss.
    pub step_guard: bool,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self {
            n_trees: 1000,
            max_depth: 8,
            learning_rate: 0.05,
            lambda: 1.0,
            min_leaf: 20,
            loss: Loss::Logistic,
            cat_mode: CatMode::OrderedTarget,
            early_stopping: Some(50),
            binning: Binning::Exact,
            seed: 0,
            step_guard: true,
        }
    }
}

/// Full-training-set target statistics used to encode a categorical column
/// at prediction time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub prior: f64,
    pub sums: Vec<f64>,
    pub counts: Vec<f64>,
}

impl TargetStats {
    fn fit(codes: &[f64], labels: &[f64], prior: f64) -> Self {
        let n_cats = codes.iter().fold(0usize, |m, c| m.max(*c as usize + 1));
        let mut sums = vec![0.0; n_cats];
        let mut counts = vec![0.0; n_cats];
        for (c, y) in codes.iter().zip(labels) {
            sums[*c as usize] += y;
            counts[*c as usize] += 1.0;
        }
        Self { prior, sums, counts }
    }

    pub fn encode(&self, code: f64) -> f64 {
        let c = code as usize;
        if code < 0.0 || c >= self.sums.len() {
            return self.prior;
        }
        (self.sums[c] + self.prior) / (self.counts[c] + 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub format_version: u32,
    pub loss: Loss,
    pub cat_mode: CatMode,
    pub base_score: f64,
    pub learning_rate: f64,
    pub n_features: usize,
    pub categorical: Vec<bool>,
    /// One entry per column; set for categorical columns in ordered mode.
    pub target_stats: Vec<Option<TargetStats>>,
    pub trees: Vec<Tree>,
    /// Mean training loss before round 1 and after every kept round.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub warnings: Vec<String>,
}

impl GbdtModel {
    fn constant(n_features: usize, categorical: Vec<bool>, cfg: &GbdtConfig, base_score: f64) -> Self {
        Self {
            format_version: GBDT_FORMAT_VERSION,
            loss: cfg.loss,
            cat_mode: cfg.cat_mode,
            base_score,
            learning_rate: cfg.learning_rate,
            n_features,
            target_stats: vec![None; categorical.len()],
            categorical,
            trees: Vec::new(),
            train_loss: Vec::new(),
            val_loss: Vec::new(),
            warnings: Vec::new(),
        }
    }

    fn encode_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.target_stats)
            .map(|(v, s)| s.as_ref().map_or(*v, |s| s.encode(*v)))
            .collect()
    }

    fn encode_table(&self, t: &Table) -> Table {
        let columns = t
            .columns
            .iter()
            .zip(&self.target_stats)
            .map(|(c, s)| match s {
                Some(s) => c.iter().map(|v| s.encode(*v)).collect(),
                None => c.clone(),
            })
            .collect();
        let categorical = t
            .categorical
            .iter()
            .zip(&self.target_stats)
            .map(|(c, s)| *c && s.is_none())
            .collect();
        Table { columns, categorical }
    }

    /// Logit for logistic loss, prediction for squared loss.
    pub fn raw_score(&self, x: &[f64]) -> Result<f64, TreeError> {
        if x.len() != self.n_features {
            return Err(TreeError::Shape {
                expected: self.n_features,
                found: x.len(),
            });
        }
        let enc = self.encode_row(x);
        Ok(self.base_score + self.learning_rate * self.trees.iter().map(|t| t.eval(&enc)).sum::<f64>())
    }

    /// Probability for logistic loss, value for squared loss.
    pub fn predict_row(&self, x: &[f64]) -> Result<f64, TreeError> {
        let raw = self.raw_score(x)?;
        Ok(self.link(raw))
    }

    pub fn predict_table(&self, t: &Table) -> Result<Vec<f64>, TreeError> {
        if t.n_cols() != self.n_features {
            return Err(TreeError::Shape {
                expected: self.n_features,
                found: t.n_cols(),
            });
        }
        let enc = self.encode_table(t);
        Ok(par::map_range(t.n_rows(), |i| {
            let s: f64 = self.trees.iter().map(|tr| tr.eval_table(&enc, i)).sum();
            self.link(self.base_score + self.learning_rate * s)
        }))
    }

    fn link(&self, raw: f64) -> f64 {
        match self.loss {
            Loss::Logistic => sigmoid(raw),
            Loss::Squared => raw,
        }
    }

    /// Total split gain per column.
    pub fn gain_importance(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.n_features];
        for t in &self.trees {
            t.accumulate_gain(&mut g);
        }
        g
    }
}

fn mean_loss(loss: Loss, raw: &[f64], y: &[f64]) -> f64 {
    let s: f64 = raw
        .iter()
        .zip(y)
        .map(|(f, y)| match loss {
            // log(1 + e^f) − y·f, evaluated stably
            Loss::Logistic => f.max(0.0) + (-f.abs()).exp().ln_1p() - y * f,
            Loss::Squared => (f - y) * (f - y),
        })
        .sum();
    s / raw.len().max(1) as f64
}

fn validate(cfg: &GbdtConfig, train: &Table, y: &[f64]) -> Result<(), TreeError> {
    if train.n_rows() == 0 {
        return Err(TreeError::Empty);
    }
    if y.len() != train.n_rows() {
        return Err(TreeError::Shape {
            expected: train.n_rows(),
            found: y.len(),
        });
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate <= 1.0) {
        return Err(TreeError::Config(format!(
            "learning_rate must be in (0, 1], got {}",
            cfg.learning_rate
        )));
    }
    if cfg.lambda < 0.0 {
        return Err(TreeError::Config("lambda must be non-negative".into()));
    }
    if cfg.max_depth == 0 {
        return Err(TreeError::Config("max_depth must be at least 1".into()));
    }
    if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
        return Err(TreeError::Config(format!("non-finite target {bad}")));
    }
    if cfg.loss == Loss::Logistic {
        if let Some(bad) = y.iter().find(|v| **v != 0.0 && **v != 1.0) {
            return Err(TreeError::Config(format!(
                "logistic loss needs 0/1 labels, found {bad}"
            )));
        }
    }
    Ok(())
}

/// Stagewise Newton boosting with optional validation early stopping.
pub fn fit_gbdt(
    train: &Table,
    y: &[f64],
    val: Option<(&Table, &[f64])>,
    cfg: &GbdtConfig,
) -> Result<GbdtModel, TreeError> {
    validate(cfg, train, y)?;
    if let Some((vt, vy)) = val {
        if vt.n_cols() != train.n_cols() || vt.n_rows() != vy.len() {
            return Err(TreeError::Shape {
                expected: train.n_cols(),
                found: vt.n_cols(),
            });
        }
    }
    let n = y.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let single_class = cfg.loss == Loss::Logistic && (mean == 0.0 || mean == 1.0);
    let base_score = match cfg.loss {
        Loss::Squared => mean,
        Loss::Logistic => {
            let p = mean.clamp(1e-6, 1.0 - 1e-6);
            (p / (1.0 - p)).ln()
        }
    };
    let mut model = GbdtModel::constant(train.n_cols(), train.categorical.clone(), cfg, base_score);
    if single_class {
        let msg = format!("single-class target (all {mean}); returning a constant predictor");
        log::warn!("{msg}");
        model.warnings.push(msg);
        return Ok(model);
    }
    if cfg.cat_mode == CatMode::OrderedTarget {
        model.target_stats = train
            .columns
            .iter()
            .zip(&train.categorical)
            .map(|(c, cat)| cat.then(|| TargetStats::fit(c, y, mean)))
            .collect();
    }
    // training columns use ordered statistics; everything else the full ones
    let mut fit_table = model.encode_table(train);
    if cfg.cat_mode == CatMode::OrderedTarget {
        for (j, cat) in train.categorical.iter().enumerate() {
            if *cat {
                let codes: Vec<u32> = train.columns[j].iter().map(|v| *v as u32).collect();
                fit_table.columns[j] = ordered_target_encode(&codes, y, cfg.seed.wrapping_add(j as u64));
            }
        }
    }
    let val_table = val.map(|(t, vy)| (model.encode_table(t), vy));

    let prep = Prepared::new(&fit_table, cfg.binning)?;
    let params = TreeParams {
        max_depth: cfg.max_depth,
        min_leaf: cfg.min_leaf,
        lambda: cfg.lambda,
        feature_rate: 1.0,
        binning: cfg.binning,
    };
    let lr = cfg.learning_rate;
    let mut raw = vec![base_score; n];
    let mut val_raw: Option<Vec<f64>> = val_table.as_ref().map(|(t, _)| vec![base_score; t.n_rows()]);
    let mut loss = mean_loss(cfg.loss, &raw, y);
    model.train_loss.push(loss);
    if let (Some(vr), Some((_, vy))) = (&val_raw, &val_table) {
        model.val_loss.push(mean_loss(cfg.loss, vr, vy));
    }
    let mut best_val = model.val_loss.first().copied().unwrap_or(f64::INFINITY);
    let mut best_round = 0;
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];

    for round in 1..=cfg.n_trees {
        for i in 0..n {
            match cfg.loss {
                Loss::Logistic => {
                    let p = sigmoid(raw[i]);
                    grad[i] = p - y[i];
                    hess[i] = p * (1.0 - p);
                }
                Loss::Squared => {
                    grad[i] = raw[i] - y[i];
                    hess[i] = 1.0;
                }
            }
        }
        let mut tree = prep.fit(
            TreeFit::Newton {
                grad: &grad,
                hess: &hess,
            },
            &params,
            None,
        )?;
        let mut delta: Vec<f64> = par::map_range(n, |i| tree.eval_table(&fit_table, i));
        let mut next: Vec<f64> = raw.iter().zip(&delta).map(|(r, d)| r + lr * d).collect();
        let mut next_loss = mean_loss(cfg.loss, &next, y);
        if cfg.step_guard {
            let mut halvings = 0;
            while next_loss > loss && halvings < 40 {
                tree.scale_leaves(0.5);
                delta.iter_mut().for_each(|d| *d *= 0.5);
                next = raw.iter().zip(&delta).map(|(r, d)| r + lr * d).collect();
                next_loss = mean_loss(cfg.loss, &next, y);
                halvings += 1;
            }
            if next_loss > loss {
                log::debug!("round {round}: no descent step found; stopping");
                break;
            }
        }
        raw = next;
        loss = next_loss;
        model.train_loss.push(loss);
        if let (Some(vr), Some((vt, vy))) = (&mut val_raw, &val_table) {
            for (i, v) in vr.iter_mut().enumerate() {
                *v += lr * tree.eval_table(vt, i);
            }
            let vl = mean_loss(cfg.loss, vr, vy);
            model.val_loss.push(vl);
            if vl < best_val {
                best_val = vl;
                best_round = round;
            }
        }
        model.trees.push(tree);
        if let (Some(patience), true) = (cfg.early_stopping, val_raw.is_some()) {
            if round - best_round >= patience {
                log::debug!("early stop at round {round}; best round {best_round}");
                break;
            }
        }
    }
    if cfg.early_stopping.is_some() && val_raw.is_some() {
        model.trees.truncate(best_round);
        model.train_loss.truncate(best_round + 1);
        model.val_loss.truncate(best_round + 1);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    fn separable(n: usize, seed: u64) -> (Table, Vec<f64>) {
        let mut rng = Rng::new(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.normal(), rng.normal()]).collect();
        let y = rows
            .iter()
            .map(|r| f64::from(u8::from(r[0] + 0.5 * r[1] > 0.0)))
            .collect();
        (Table::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn zero_trees_is_base_score() {
        let (t, y) = separable(50, 1);
        let cfg = GbdtConfig {
            n_trees: 0,
            loss: Loss::Squared,
            ..GbdtConfig::default()
        };
        let m = fit_gbdt(&t, &y, None, &cfg).unwrap();
        let mean = y.iter().sum::<f64>() / 50.0;
        assert_eq!(m.predict_row(&[0.3, -1.0]).unwrap(), mean);
    }

    #[test]
    fn single_class_warns() {
        let (t, _) = separable(30, 1);
        let m = fit_gbdt(&t, &[1.0; 30], None, &GbdtConfig::default()).unwrap();
        assert!(m.trees.is_empty());
        assert_eq!(m.warnings.len(), 1);
        let p = m.predict_row(&[0.0, 0.0]).unwrap();
        assert!(p > 0.99);
    }

    #[test]
    fn logloss_decreases_on_separable_data() {
        let (t, y) = separable(200, 2);
        let cfg = GbdtConfig {
            n_trees: 60,
            min_leaf: 5,
            early_stopping: None,
            ..GbdtConfig::default()
        };
        let m = fit_gbdt(&t, &y, None, &cfg).unwrap();
        assert_eq!(m.train_loss.len(), 61);
        for w in m.train_loss.windows(2).take(50) {
            assert!(w[1] < w[0], "{} !< {}", w[1], w[0]);
        }
        for p in m.predict_table(&t).unwrap() {
            assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn fits_linear_function() {
        let mut rng = Rng::new(5);
        let xs: Vec<f64> = (0..700).map(|_| rng.uniform()).collect();
        let y: Vec<f64> = xs.iter().map(|x| 3.0 * x).collect();
        let rows: Vec<Vec<f64>> = xs.iter().map(|x| vec![*x]).collect();
        let train = Table::from_rows(&rows[..500]).unwrap();
        let test = Table::from_rows(&rows[500..]).unwrap();
        let cfg = GbdtConfig {
            n_trees: 400,
            learning_rate: 0.1,
            min_leaf: 5,
            loss: Loss::Squared,
            early_stopping: None,
            ..GbdtConfig::default()
        };
        let m = fit_gbdt(&train, &y[..500], None, &cfg).unwrap();
        let pred = m.predict_table(&test).unwrap();
        let rmse = (pred.iter().zip(&y[500..]).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / 200.0).sqrt();
        let m500 = y[..500].iter().sum::<f64>() / 500.0;
        let sd = (y[..500].iter().map(|v| (v - m500).powi(2)).sum::<f64>() / 500.0).sqrt();
        assert!(rmse < 0.1 * sd, "rmse {rmse} sd {sd}");
    }

    #[test]
    fn early_stopping_truncates_to_best_round() {
        let (t, mut y) = separable(300, 3);
        // label noise so validation loss turns up
        for i in (0..300).step_by(4) {
            y[i] = 1.0 - y[i];
        }
        let (vt, vy) = (t.select_rows(&(200..300).collect::<Vec<_>>()), y[200..].to_vec());
        let tt = t.select_rows(&(0..200).collect::<Vec<_>>());
        let cfg = GbdtConfig {
            n_trees: 500,
            learning_rate: 0.3,
            min_leaf: 2,
            early_stopping: Some(10),
            ..GbdtConfig::default()
        };
        let m = fit_gbdt(&tt, &y[..200], Some((&vt, &vy)), &cfg).unwrap();
        assert!(m.trees.len() < 500);
        let best = m.val_loss.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(*m.val_loss.last().unwrap(), best);
    }

    #[test]
    fn random_category_gets_little_gain() {
        let mut rng = Rng::new(8);
        let n = 1000;
        let x: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let noise_cat: Vec<f64> = (0..n).map(|_| rng.below(6) as f64).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| f64::from(u8::from(*v + 0.3 * rng.normal() > 0.0)))
            .collect();
        let t = Table::new(vec![x, noise_cat], vec![false, true]).unwrap();
        let cfg = GbdtConfig {
            n_trees: 100,
            max_depth: 4,
            early_stopping: None,
            ..GbdtConfig::default()
        };
        let m = fit_gbdt(&t, &y, None, &cfg).unwrap();
        let g = m.gain_importance();
        assert!(g[1] / (g[0] + g[1]) < 0.05, "{g:?}");
    }

    #[test]
    fn seeded_fit_is_reproducible() {
        let (t, y) = separable(150, 4);
        let cfg = GbdtConfig {
            n_trees: 20,
            min_leaf: 5,
            ..GbdtConfig::default()
        };
        let a = serde_json::to_string(&fit_gbdt(&t, &y, None, &cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&fit_gbdt(&t, &y, None, &cfg).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatch() {
        let (t, y) = separable(40, 4);
        let m = fit_gbdt(
            &t,
            &y,
            None,
            &GbdtConfig {
                n_trees: 2,
                ..GbdtConfig::default()
            },
        )
        .unwrap();
        assert!(matches!(m.predict_row(&[1.0]), Err(TreeError::Shape { .. })));
        assert!(fit_gbdt(&t, &y[..3], None, &GbdtConfig::default()).is_err());
        let bad = vec![0.5; 40];
        assert!(fit_gbdt(&t, &bad, None, &GbdtConfig::default()).is_err());
    }
}
