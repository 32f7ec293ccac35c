//! Decision trees, random forests and gradient-boosted trees.
//!
//! All learners consume a column-major [`Table`]. Numeric columns split on
//! `x <= threshold` where the threshold is an observed training value, so
//! fitted trees are invariant under strictly monotone rescaling of a column.
//! Categorical columns hold non-negative integer codes and split one
//! category against the rest.

mod forest;
mod gbdt;
mod ordered;
mod tree;

pub use forest::{bootstrap_rows, fit_forest, ForestConfig, ForestModel};
pub use gbdt::{fit_gbdt, CatMode, GbdtConfig, GbdtModel, Loss, TargetStats};
pub use ordered::{ordered_target_encode, ordered_target_encode_with};
pub use tree::{fit_tree, fit_tree_with, Binning, Node, SplitRule, Tree, TreeFit, TreeParams};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Feature, FeatureMask, FeatureVector};

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("no training rows")]
    Empty,
    #[error("shape mismatch: expected {expected} values, found {found}")]
    Shape { expected: usize, found: usize },
    #[error("invalid value in column {column} row {row}: {value}")]
    BadValue { column: usize, row: usize, value: f64 },
    #[error("configuration error: {0}")]
    Config(String),
}

/// Column-major feature table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<Vec<f64>>,
    pub categorical: Vec<bool>,
}

impl Table {
    pub fn new(columns: Vec<Vec<f64>>, categorical: Vec<bool>) -> Result<Self, TreeError> {
        if columns.len() != categorical.len() {
            return Err(TreeError::Shape {
                expected: columns.len(),
                found: categorical.len(),
            });
        }
        if let Some(first) = columns.first() {
            for c in &columns {
                if c.len() != first.len() {
                    return Err(TreeError::Shape {
                        expected: first.len(),
                        found: c.len(),
                    });
                }
            }
        }
        Ok(Self { columns, categorical })
    }

    /// All-numeric table from row-major data.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TreeError> {
        let width = rows.first().map_or(0, Vec::len);
        let mut columns = vec![Vec::with_capacity(rows.len()); width];
        for r in rows {
            if r.len() != width {
                return Err(TreeError::Shape {
                    expected: width,
                    found: r.len(),
                });
            }
            for (c, v) in columns.iter_mut().zip(r) {
                c.push(*v);
            }
        }
        Ok(Self {
            categorical: vec![false; width],
            columns,
        })
    }

    /// One column per feature selected by `mask`, in slot order.
    pub fn from_vectors(vectors: &[FeatureVector], mask: FeatureMask) -> Self {
        let features = mask.features();
        let columns = features
            .iter()
            .map(|f| vectors.iter().map(|v| v.get(*f)).collect())
            .collect();
        Self {
            columns,
            categorical: features.iter().map(|f| f.is_categorical()).collect(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    /// Copy of the listed rows (repeats allowed).
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&r| c[r]).collect())
                .collect(),
            categorical: self.categorical.clone(),
        }
    }
}

/// Values of the masked-in features of one vector, in slot order.
pub fn vector_row(v: &FeatureVector, mask: FeatureMask) -> Vec<f64> {
    mask.features().iter().map(|f: &Feature| v.get(*f)).collect()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
