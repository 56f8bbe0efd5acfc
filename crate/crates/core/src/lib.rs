//! Plug-and-play latent-space text generation: a frozen denoising sequence
//! autoencoder, a learned embedding-to-embedding mapping trained with an
//! adversarial manifold term, inference-time gradient refinement, and the
//! metrics and sweeps used to evaluate them.

pub mod autodiff;
pub mod autoencoder;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod fgim;
pub mod mapping;
pub mod nn;
pub mod objectives;
pub mod pipeline;
pub mod synthetic;
pub mod text;

pub use error::{Error, Result};
