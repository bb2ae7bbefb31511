//! Neural deformable fields for articulated bodies.
//!
//! Observation-space points are projected onto a skinned reference surface,
//! expressed as `(u, v, l)` texel/distance coordinates, and fed through
//! pose-conditioned density and color networks. Images are formed by
//! volumetric quadrature along camera rays.

pub mod body;
pub mod cli;
pub mod config;
pub mod geometry;
pub mod imaging;
pub mod metrics;
pub mod nets;
pub mod projection;
pub mod render;
pub mod scene;
pub mod train;
