//! Dual-space score-distillation avatar optimisation: a parametric body model
//! provides a density prior and skinning-based deformation for a trainable
//! neural field that is supervised in a canonical and an observed pose.

pub mod bodymodel;
pub mod cli;
pub mod container;
pub mod deform;
pub mod error;
pub mod field;
pub mod geoquery;
pub mod guidance;
pub mod losses;
pub mod meshexport;
pub mod render;
pub mod trainer;

pub use error::{Error, Result};

/// 3-vector in scene units.
pub type Vec3 = nalgebra::Vector3<f64>;
