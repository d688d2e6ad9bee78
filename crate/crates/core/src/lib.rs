//! Rate-adaptive generative joint source-channel coding.
//!
//! Images are mapped to a latent grid, a hyperprior entropy model sizes a
//! variable number of complex channel symbols per latent vector, the symbols
//! cross a power-normalised AWGN channel, and a conditional diffusion decoder
//! that predicts the clean image directly reconstructs the picture in a few
//! sampling steps.
//!
//! Module map:
//! - [`numerics`]: tensors, reverse-mode graph, layers, random streams, Adam.
//! - [`transforms`]: analysis, hyperprior, JSCC encoder/decoder, U-Net denoiser.
//! - [`entropy`]: quantisation, discretised Gaussian likelihoods, rate in bits.
//! - [`link`]: rate allocation, checkerboard ordering, framing, AWGN, CBR.
//! - [`diffusion`]: noise schedule, forward noising, x0-prediction sampler.
//! - [`objective`]: distortion, perceptual proxy, rate-distortion-perception loss.
//! - [`pipeline`]: datasets, three-stage training, checkpoints, evaluation.
//! - [`selfcheck`]: gradient suite and acceptance criteria, runnable from the CLI.

pub mod cli;
pub mod diffusion;
pub mod entropy;
pub mod error;
pub mod link;
pub mod numerics;
pub mod objective;
pub mod pipeline;
pub mod selfcheck;
pub mod transforms;

pub use error::{Error, Result};
