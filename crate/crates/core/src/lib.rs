//! Kinematics, synthetic data, diffusion model, training and metrics for
//! part-token conditioned motion generation.

pub mod bvh;
pub mod checkpoint;
pub mod conditioning;
pub mod dataset;
pub mod denoiser;
pub mod description;
pub mod diffusion;
pub mod embed;
mod error;
pub mod eval;
pub mod normalize;
pub mod params;
pub mod sampling;
pub mod skeleton;
pub mod training;

pub use error::{Error, Result};
