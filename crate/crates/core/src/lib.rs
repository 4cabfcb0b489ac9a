//! Patch-based camera image denoising with a three-subspace (Y/U/V)
//! variational autoencoder, learned latent transformations and soft
//! actor-critic fine-tuning of those transformations.

pub mod cli;
pub mod color;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod patch;
pub mod rl;
pub mod rng;
pub mod train;

pub use color::ColorSpace;
pub use data::{ImageBuffer, ImagePair};
pub use error::{Error, Result};
pub use model::{ModelCheckpoint, ModelConfig, Vae};
pub use patch::{PatchGrid, PatchSet};
