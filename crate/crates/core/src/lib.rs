//! Stylize one 3D Gaussian-splat scene with another by explicit distribution
//! matching.
//!
//! The content scene is partitioned with k-means, every content cluster is
//! registered into the style scene with a constrained similarity transform, a
//! style sub-cloud is selected around the registered cluster, and that
//! sub-cloud is moved toward the content cluster by gradient flow on the
//! debiased Sinkhorn divergence. The optimized fragments replace the content
//! scene and are written back as a standard splat PLY.
//!
//! Module map:
//!
//! - [`cloud`]: splat data model, PLY codec, feature assembly, surface resampling
//! - [`sinkhorn`]: log-domain entropic OT, Sinkhorn divergence and its gradient
//! - [`partition`]: seeded k-means and small-cluster repair
//! - [`register`]: exact kNN index, similarity fitting, style selection
//! - [`styler`]: per-cluster flow, surface energy, write-back, the full pipeline
//! - [`regularize`]: scale anisotropy / uniformity losses and projection
//! - [`render`]: deterministic CPU preview renderer
//! - [`cli`]: the `splatstyle` command-line front end

pub mod cli;
pub mod cloud;
mod error;
pub mod partition;
pub mod register;
pub mod regularize;
pub mod render;
pub mod sinkhorn;
pub mod spatial;
pub mod styler;
pub mod synth;

pub use error::{Error, Result};
