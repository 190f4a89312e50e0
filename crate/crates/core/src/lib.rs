//! Low-light scene reconstruction with anchor-based Gaussian splatting.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`llgim`] voxelizes a dense point cloud into anchors and thins them with
//!    distance-adaptive stochastic pruning, then refines geometry against a
//!    monocular depth prior.
//! 2. [`scene`] holds the anchors with two feature volumes (intrinsic and
//!    transient) and the small decoders that turn them into Gaussians.
//! 3. [`render`] splats the decoded Gaussians into reflectance, illumination,
//!    residual, enhanced-illumination and depth maps, with hand-written
//!    reverse-mode gradients.
//! 4. [`train`] optimizes the unsupervised objectives in [`losses`] with Adam
//!    ([`diff`]).
//! 5. [`eval`] scores enhanced renders after affine luminance alignment.
//!
//! [`synth`] generates multi-view scenes with known decomposition, used as the
//! test oracle.

pub mod diff;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod geometry;
pub mod llgim;
pub mod losses;
pub mod render;
pub mod scene;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
