use serde::{Deserialize, Serialize};

use super::tree::{Prepared, TreeFit, TreeParams};
use super::{Binning, Table, Tree, TreeError};
use crate::numcore::Rng;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Fraction of columns considered at each split.
    pub feature_rate: f64,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: 8,
            min_leaf: 5,
            feature_rate: 0.6,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub n_features: usize,
    pub feature_rate: f64,
    /// Seed of each tree's random stream.
    pub seeds: Vec<u64>,
    pub trees: Vec<Tree>,
}

impl ForestModel {
    /// Mean tree output; with 0/1 targets this is the positive-class fraction.
    pub fn predict_row(&self, x: &[f64]) -> Result<f64, TreeError> {
        if x.len() != self.n_features {
            return Err(TreeError::Shape {
                expected: self.n_features,
                found: x.len(),
            });
        }
        Ok(self.trees.iter().map(|t| t.eval(x)).sum::<f64>() / self.trees.len().max(1) as f64)
    }

    pub fn predict_table(&self, t: &Table) -> Result<Vec<f64>, TreeError> {
        if t.n_cols() != self.n_features {
            return Err(TreeError::Shape {
                expected: self.n_features,
                found: t.n_cols(),
            });
        }
        let k = self.trees.len().max(1) as f64;
        Ok(par::map_range(t.n_rows(), |i| {
            self.trees.iter().map(|tr| tr.eval_table(t, i)).sum::<f64>() / k
        }))
    }

    pub fn gain_importance(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.n_features];
        for t in &self.trees {
            t.accumulate_gain(&mut g);
        }
        g
    }
}

/// Row indices drawn with replacement for the tree seeded by `seed`.
pub fn bootstrap_rows(seed: u64, n: usize) -> Vec<usize> {
    let mut rng = Rng::new(seed);
    (0..n).map(|_| rng.below(n)).collect()
}

fn tree_seed(base: u64, i: usize) -> u64 {
    Rng::new(base).fork(i as u64).next_u64()
}

pub fn fit_forest(train: &Table, y: &[f64], cfg: &ForestConfig) -> Result<ForestModel, TreeError> {
    let n = train.n_rows();
    if n == 0 {
        return Err(TreeError::Empty);
    }
    if y.len() != n {
        return Err(TreeError::Shape {
            expected: n,
            found: y.len(),
        });
    }
    if cfg.n_trees == 0 {
        return Err(TreeError::Config("a forest needs at least one tree".into()));
    }
    let params = TreeParams {
        max_depth: cfg.max_depth,
        min_leaf: cfg.min_leaf,
        lambda: 0.0,
        feature_rate: cfg.feature_rate,
        binning: Binning::Exact,
    };
    let seeds: Vec<u64> = (0..cfg.n_trees).map(|i| tree_seed(cfg.seed, i)).collect();
    let shared = if cfg.bootstrap {
        None
    } else {
        Some(Prepared::new(train, Binning::Exact)?)
    };
    let trees: Vec<Result<Tree, TreeError>> = par::map_slice(&seeds, |&seed| {
        // the bootstrap draw and the feature draws use separate streams
        let mut rng = Rng::new(seed).fork(1);
        match &shared {
            Some(prep) => prep.fit(TreeFit::Raw(y), &params, Some(&mut rng)),
            None => {
                let rows = bootstrap_rows(seed, n);
                let sample = train.select_rows(&rows);
                let ys: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
                Prepared::new(&sample, Binning::Exact)?.fit(TreeFit::Raw(&ys), &params, Some(&mut rng))
            }
        }
    });
    Ok(ForestModel {
        n_features: train.n_cols(),
        feature_rate: cfg.feature_rate,
        seeds,
        trees: trees.into_iter().collect::<Result<_, _>>()?,
    })
}
