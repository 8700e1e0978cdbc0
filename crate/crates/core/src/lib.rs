//! Wavelet-space variational autoencoders.
//!
//! The decoder predicts multi-level Haar wavelet coefficients and the image
//! is recovered with the inverse transform. Around that sit a small autodiff
//! engine, the layers and optimizer, frequency-domain and Fréchet metrics, a
//! wavelet-generator GAN, dataset tooling, and the command implementations
//! used by the `wvae` binary.

pub mod cli;
pub mod data;
pub mod error;
pub mod gan;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod tensor;
pub mod wavelet;

pub use error::{Error, Result};
