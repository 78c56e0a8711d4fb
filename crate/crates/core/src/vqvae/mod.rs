//! Vector-quantized autoencoder for range images with a separate raydrop head.
//!
//! The encoder maps the composite range image (zeros where rays dropped) to a
//! latent grid; each latent vector is snapped to its nearest codebook row; the
//! decoder produces a clean range image and per-pixel raydrop logits. The
//! final image is the range head masked by the thresholded logits.

mod config;
mod gp;
pub mod loss;
mod model;
mod train;

pub use config::{GpConfig, VqVaeConfig};
pub use gp::{apply_geometric_preservation, GeometricTransform};
pub use model::{compose, nearest_codes, threshold_mask, DecoderOutput, Forward, TokenGrid, VqVae};
pub use train::{train_vqvae, CodebookUpkeep, VqLogRow, VqTrainLog, VQ_LOG_HEADER};
