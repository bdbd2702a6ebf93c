//! Object-level radiance fields trained from instance masks and loose
//! bounding boxes, plus the tooling to measure how their geometry degrades
//! under corrupted masks and camera poses.
//!
//! The numeric core ([`hashfield`], [`volrender`], [`trainer`]) is generic
//! over [`Real`]; the aliases below fix the scalar type used for training.

pub mod corruption;
pub mod datamodel;
pub mod error;
pub mod evalkit;
pub mod experiment;
pub mod hashfield;
pub mod isolation;
pub mod scalar;
pub mod synthscene;
pub mod trainer;
pub mod volrender;

pub use error::{Error, Result};
pub use scalar::Real;

/// Radiance field in the training precision.
pub type Field = hashfield::HashField<f32>;
/// Radiance field in double precision, used by gradient oracles.
pub type Field64 = hashfield::HashField<f64>;
