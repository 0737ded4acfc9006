//! Disentangled NeRF-GAN inversion and editing on a procedural face world.

pub mod camera;
pub mod config;
pub mod error;
pub mod eval;
pub mod encoder;
pub mod exec;
pub mod flow;
pub mod generator;
pub mod image;
pub mod inversion;
pub mod nn;
pub mod scene;
pub mod trainlog;
pub mod video;

pub use error::{Error, Result};
