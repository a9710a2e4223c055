//! Joint variational autoencoder feature-enhancement stack.
//!
//! Far-field feature sequences are mapped toward their time-aligned
//! close-talk counterparts by a joint VAE (one encoder, two decoders over a
//! shared latent space), optionally trained end to end with a
//! frame-classification acoustic model. The crate provides the autodiff
//! engine, recurrent layers, probabilistic losses, a synthetic parallel
//! corpus generator, and the training/evaluation harness; `jvae-cli` wraps
//! it all in a command line.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod layers;
pub mod models;
pub mod prob;
pub mod seed;
pub mod train;

pub use autodiff::{Graph, Gradients, Tensor};
pub use error::{Error, Result};
