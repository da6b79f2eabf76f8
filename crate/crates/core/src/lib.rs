//! Lifts inconsistent per-view 2D segmentation masks onto a 3D Gaussian-splat
//! scene by optimizing per-primitive embedding vectors, then decodes rendered
//! embeddings directly into multi-view-consistent instance/semantic labels
//! without a clustering post-pass.
//!
//! Pipeline: [`synth`] generates scenes and masks, [`raster`] projects and
//! alpha-blends embeddings (with an analytic backward pass), [`losses`] holds
//! the contrastive / triplet / 3D-smoothness objectives, [`train`] runs the
//! Adam loop, [`codec`] turns rendered embeddings into integer labels, and
//! [`metrics`] / [`baseline`] evaluate against a two-stage comparator.
//!
//! With the default `parallel` feature, per-pixel work is distributed with
//! rayon; disabling it falls back to an identical sequential path. Both paths
//! produce bit-identical results (row outputs are merged in a fixed order).

pub mod baseline;
pub mod codec;
pub mod error;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod pipeline;
pub mod raster;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

/// Numerically adequate logistic sigmoid; saturates cleanly to 0/1.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
