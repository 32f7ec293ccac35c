//! Command-line tools and an HTTP inference service over trained
//! insulin-resistance models.

pub mod api;
pub mod bundle;
pub mod cli;
pub mod service;

pub use bundle::{ApiError, Bundle, BundleError};
