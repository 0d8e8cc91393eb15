//! Predict a large model's benchmark accuracy from the per-task pass
//! rates of a ladder of small models.
//!
//! The pipeline clusters tasks by their difficulty vectors, fits a
//! compute-scaling curve per cluster, keeps the clusters whose fits
//! extrapolate reliably, aggregates them into a predictable-subset
//! prediction at the target compute, and maps that onto the full task
//! set through an endpoint-constrained polynomial.

pub mod cluster;
pub mod data;
pub mod error;
pub mod fit;
pub mod io;
pub mod pipeline;
pub mod predict;
pub mod synth;
pub mod theory;

pub use error::{Error, Result};
