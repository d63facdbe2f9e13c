//! Indoor scene reconstruction from posed images and per-view geometry priors.
//!
//! A neural signed distance field and a radiance field are optimized with a
//! volume renderer, distance/normal prior losses and a perturbation-residual
//! term; the surface is then extracted with marching cubes and cleaned by
//! re-fusing ray-traced depth maps into a TSDF volume.

pub mod error;
pub mod evaluation;
pub mod extraction;
pub mod fields;
pub mod losses;
pub mod pipeline;
pub mod preprocess;
pub mod renderer;
pub mod scene_io;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
