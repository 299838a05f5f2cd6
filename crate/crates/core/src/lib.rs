//! A CPU-trainable voxel radiance field with two ray-budget reductions:
//! a per-image prior that concentrates training rays where local color
//! variation is high, and per-view quadtrees that stop spending rays on
//! image blocks whose rendering error has already converged.
//!
//! The crate is organized around the training pipeline:
//!
//! * [`imaging`] — images, PNG I/O, and the context-based sampling prior
//! * [`geometry`] — cameras, rays, dataset loading, and a procedural
//!   multi-view scene generator used as ground truth in tests
//! * [`field`] — the dense voxel grid of density/color parameters
//! * [`render`] — volume rendering along rays, forward and backward
//! * [`sampler`] — quadtrees, error-driven subdivision, and pixel draws
//! * [`metrics`] — PSNR and SSIM
//! * [`trainer`] — the epoch loop, the uniform-sampling baseline, and the
//!   side-by-side benchmark of the two

pub mod field;
pub mod geometry;
pub mod imaging;
pub mod metrics;
pub mod render;
pub mod sampler;
pub mod trainer;
pub mod vec3;

pub use vec3::Vec3;
