//! Gaussian-splat soft-tissue pipeline.
//!
//! The crate fits an explicit 3D Gaussian scene to posed RGB-D frames with
//! tool masks ([`reconstruct`]), fills the occluded interior with invisible
//! support particles ([`padding`]), and simulates the result as a Neo-Hookean
//! body with MLS-MPM ([`mpm`]). [`render`] rasterizes both the factored
//! Gaussians used during fitting and the deformed covariances produced by the
//! simulator.

pub mod bench;
pub mod camera;
pub mod config;
pub mod fixtures;
pub mod frames;
pub mod math;
pub mod mpm;
pub mod padding;
pub mod ply;
pub mod reconstruct;
pub mod render;
pub mod scene;
pub mod spatial;

pub use camera::{Camera, Frame, Raster};
pub use config::PipelineConfig;

pub use scene::{Aabb, Gaussian, MaterialParams, Scene};
