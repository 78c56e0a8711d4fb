//! Causal transformer prior over row-major token sequences, trained by
//! teacher-forced negative log-likelihood and sampled ancestrally.

mod model;
mod sample;
mod tokens;
mod train;

pub use model::{Transformer, TransformerConfig};
pub use sample::{ancestral_sample, draw, sequence_nll, Autoregressive, SamplingConfig};
pub use tokens::{
    decode_token_set, encode_token_set, flatten, read_token_set, tokens_to_grid, write_token_set, TOK_MAGIC,
    TOK_VERSION,
};
pub use train::{train_transformer, AR_LOG_HEADER};
