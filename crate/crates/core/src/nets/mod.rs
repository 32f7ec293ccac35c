//! Neural tabular models: linear, MLP, TabTransformer-style and
//! TabKANet-style networks on the numcore tape.

mod attention;
mod bspline;
mod kan;
mod model;
mod params;
mod serial;

pub use attention::{attention, Attention};
pub use bspline::{bspline_basis, LocalBasis, SplineGrid};
pub use kan::{kan_layer, kan_shapes, KanMode};
pub use model::{Batch, HeadKind, Layout, Mode, NetConfig, NetKind, NetModel};
pub use params::{Param, ParamStore};
pub use serial::NET_FORMAT_VERSION;

use thiserror::Error;

use crate::numcore::NumError;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input shape mismatch: {0}")]
    Shape(String),
    #[error("numeric fault in layer `{layer}`")]
    NumericFault { layer: String },
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("model file: {0}")]
    Format(String),
}
