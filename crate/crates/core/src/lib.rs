//! Bounding-box abstractions over neural-network monitoring variables for
//! post-hoc out-of-distribution detection.
//!
//! The pipeline: read a [`store::FeatureStore`], build the monitoring matrix
//! ([`monitor_vars`]), cluster each class ([`clustering`]), fit one box per
//! cluster ([`boxes`]), then score test samples ([`scoring`]) and evaluate
//! ([`eval`]). [`geometry`] holds the ReLU activation-region tools.

pub mod boxes;
pub mod cli;
pub mod clustering;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod monitor_vars;
pub mod pipeline;
pub mod scoring;
pub mod store;
pub mod synthetic;

pub use error::{Error, Result};
