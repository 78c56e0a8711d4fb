//! Range-image generative modeling for LiDAR: projection, a vector-quantized
//! autoencoder with a separate raydrop head, an autoregressive token prior and
//! the evaluation metrics, all on CPU.

pub mod autodiff;
pub mod config;
pub mod dataset;
pub mod error;
pub mod geom;
mod io_util;
pub mod nn;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod training;
pub mod transformer;
pub mod vqvae;

pub use error::{Error, Result};
