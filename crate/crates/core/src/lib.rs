//! Vector-quantized discrete bottlenecks trained three ways.
//!
//! * [`codebook`]: the K×D embedding table, exact nearest-neighbour search,
//!   the EMA update rule and usage diagnostics.
//! * [`hard_em`]: Lloyd's K-means, the exact hard-EM counterpart of the EMA
//!   rule.
//! * [`soft_em`]: posterior over codes, Monte-Carlo sampling, averaged
//!   embeddings and smoothed labels.
//! * [`bottleneck`]: forward quantization, straight-through backward and the
//!   commitment loss.
//! * [`nn`]: a small dense autoencoder trained end to end around the
//!   bottleneck.
//! * [`latent_prior`]: an n-gram prior over latent code sequences and the
//!   bits/dim bound.
//! * [`harness`]: datasets, configuration, metrics and the commands behind
//!   the `vq-em` binary.
//!
//! The runnable programs under `examples/` walk through each capability.

pub mod bottleneck;
pub mod codebook;
pub mod error;
pub mod hard_em;
pub mod harness;
pub mod latent_prior;
pub mod matrix;
pub mod nn;
pub mod soft_em;

pub use codebook::{usage_stats, Codebook, UsageStats};
pub use error::{Error, Result};
pub use matrix::{DataMatrix, Matrix};
