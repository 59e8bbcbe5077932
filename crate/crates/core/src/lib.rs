//! Noise Incentive Block toolkit.
//!
//! A stack of spatially shared convolutions, biases and pointwise activations
//! maps a constant image to a constant image. This crate makes that
//! degradation measurable and provides the Noise Incentive Block (NIB), a
//! first-layer plug-in `f1(I + N) + f2(I - N)` that breaks it, together with a
//! deep neural dithering pipeline that depends on it.
//!
//! Modules:
//! - [`autodiff`]: dense NCHW tensors, reverse-mode tape, conv/DCT/blur ops, SGD/Adam.
//! - [`nib`]: coordinate-hashed noise proxies and the NIB itself.
//! - [`models`]: ResNet / U-Net / autoencoder generators and receptive-field analysis.
//! - [`halftone`]: tone, binarization and blue-noise losses, metrics, classical
//!   dithering oracles, training and inference.
//! - [`flatlab`]: constant-input probing and the noise-mode, contamination and
//!   data-hiding studies.
//! - [`io`]: PGM/PBM/PNG, synthetic corpora, checkpoints.
//! - [`cli`]: the `nibkit` command-line front end.

pub mod autodiff;
pub mod cli;
mod error;
pub mod flatlab;
pub mod halftone;
pub mod io;
pub mod models;
pub mod nib;
pub mod parallel;

pub use error::{Error, Result};
