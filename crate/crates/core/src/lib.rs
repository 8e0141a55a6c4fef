//! Numerical building blocks for structure-aware facial landmark heatmap
//! regression.
//!
//! The crate is organised around the data flow of a heatmap-regression
//! face aligner:
//!
//! - [`geometry`]: landmark records, annotation parsing, crops and
//!   training-time augmentation.
//! - [`codec`]: Gaussian landmark heatmaps, quarter-pixel decoding and
//!   boundary heatmap rasterization, plus the `HMK1` tensor container.
//! - [`loss`]: Adaptive Wing loss, batch focal factors and the composite
//!   landmark/boundary objective with analytic gradients.
//! - [`shift`]: blur-pool downsampling, coordinate channels and a
//!   shift-consistency probe.
//! - [`propagation`]: forward-only landmark-to-boundary propagation and
//!   attention module.
//! - [`metrics`]: NME, failure rate, AUC and CED.
//! - [`synth`]: procedurally generated 98-point faces for tests and demos.

pub mod codec;
pub mod error;
pub mod geometry;
pub mod loss;
pub mod metrics;
pub mod propagation;
pub mod shift;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
