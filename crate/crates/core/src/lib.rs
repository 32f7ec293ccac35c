//! Insulin-resistance assessment toolkit.
//!
//! The crate computes the HOMA-IR, TyG and METS-IR surrogate indices,
//! prepares NHANES/CHARLS-shaped cohorts, trains a tabular model zoo
//! (linear, random forest, gradient-boosted trees, MLP, TabTransformer,
//! TabKANet), evaluates it, and explains predictions with sampled Shapley
//! values.
//!
//! Data-parallel loops (batched matrix rows, forest trees, per-instance
//! attributions, experiment cells) go through [`par`], which uses rayon
//! when the `parallel` feature is enabled and plain iterators otherwise.
//! Both paths produce bit-identical results.

pub mod dataset;
pub mod explain;
pub mod harness;
pub mod indices;
pub mod model;
pub mod nets;
pub mod numcore;
pub mod par;
pub mod trees;

mod error;

pub use error::{Error, Result};
pub use model::{Model, ModelKind};
