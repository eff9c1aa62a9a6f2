//! Location-conditioned super-resolution of satellite-style imagery.
//!
//! The crate bundles a procedural geo-referenced dataset, a GAN
//! super-resolution network conditioned on geographic location embeddings
//! through cross-attention, a location-matching projection discriminator,
//! seeded reproducible training, seamless tiled inference, and evaluation
//! metrics. Everything runs on the CPU in `f64`; with a fixed seed every
//! entry point reproduces identical bytes.

pub mod autodiff;
pub mod color;
pub mod discriminators;
pub mod error;
pub mod generator;
pub mod geodata;
pub mod image;
pub mod location;
pub mod losses;
pub mod nn;
pub mod training;

pub use error::{Error, Result};
