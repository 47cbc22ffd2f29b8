//! Video-to-4D reconstruction on a Gaussian point field.
//!
//! Frame features are split into static and dynamic parts by orthogonal
//! projection onto reference frames, sampled onto points by view
//! projection, fused across views with learned score maps, combined with a
//! factorised space-time feature grid and mapped to per-point deformations
//! that are rendered with a differentiable splat rasterizer.

pub mod camera;
pub mod deform_render;
pub mod dsfd;
pub mod error;
pub mod export;
pub mod features;
pub mod gradchecks;
pub mod image;
pub mod metrics;
pub mod numerics;
pub mod par;
pub mod point_field;
pub mod scene_synth;
pub mod train;
pub mod tssf;

pub use error::{Error, Result};
