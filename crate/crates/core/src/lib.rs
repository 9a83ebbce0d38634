//! Speech analysis, attribute control and resynthesis with a masked
//! autoencoder over mel-spectrogram and attribute tokens.

pub mod attributes;
pub mod data;
pub mod dsp;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod io;
pub mod mae;
pub mod masking;
pub mod nn;
pub mod tokenize;
pub mod trainer;
pub mod vqvae;

pub use error::{Error, Result};
