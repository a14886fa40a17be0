//! Dense depth estimation from multiple unconstrained 360° images.
//!
//! The pipeline registers equirectangular views on the unit sphere
//! (essential-matrix estimation, cheirality disambiguation, translation-scale
//! recovery against a reference baseline) and then sweeps virtual depth
//! candidates per reference pixel, picking the depth with the lowest windowed
//! photometric reprojection cost across all registered views. A procedural
//! renderer provides synthetic rigs with ground-truth depth for quantitative
//! evaluation.

pub mod correspondence;
pub mod epipolar;
pub mod eval;
pub mod filters;
pub mod imgio;
pub mod registration;
pub mod sphere;
pub mod sweep;
pub mod synth;

pub use sphere::{Bearing, EquirectImage, PixelCoord, SphericalDir};
