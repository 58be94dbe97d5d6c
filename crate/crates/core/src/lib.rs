//! Novel view synthesis from posed images through depth probability
//! volumes.
//!
//! Each input view gets a per-pixel distribution over disparity levels from
//! plane-sweep photoconsistency, optionally refined by an edge-aware
//! cross-bilateral filter. The volumes are resampled into a virtual camera,
//! accumulated and renormalised; the virtual view is then rendered back to
//! front and cut into patch bundles for a downstream refinement stage.

// `!(x > y)` is used on purpose so that NaN lands on the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dpv;
pub mod fusion;
pub mod geometry;
pub mod image;
pub mod metrics;
pub mod patches;
pub mod pipeline;
pub mod render;
pub mod scene;

pub use dpv::DepthProbabilityVolume;
pub use geometry::{Camera, DisparityRange, Intrinsics};
pub use image::Image;
