//! Desk-scale laboratory for injection-free training-data attribution of
//! conditional generative models.
//!
//! The crate trains small pixel-space diffusion models over a synthetic
//! attribute world and decides whether a suspect model was trained on data
//! generated by a known source model, either per key sample (distance
//! threshold confidence) or statistically (shadow-model discriminator).

pub mod codec;
pub mod dataset;
pub mod attribution;
pub mod diffmodel;
pub mod error;
pub mod evalharness;
pub mod image;
pub mod keyselect;
pub mod numcore;
pub mod par;
pub mod seeds;
pub mod simembed;
pub mod synthworld;

pub use error::{Error, Result};
pub use image::Image;
