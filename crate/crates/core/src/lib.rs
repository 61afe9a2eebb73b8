//! Multi-frequency perturbations for vision-language pipelines.
//!
//! - [`spectral`]: Gaussian low/high frequency decomposition with optional
//!   random spectral attenuation.
//! - [`encoder`]: deterministic linear patch encoder producing token sequences.
//! - [`fusion`]: per-position cross-attention of the original token over its
//!   low/high frequency tokens, with analytic gradients.
//! - [`metrics`]: CHAIR and POPE object-hallucination scores.
//! - [`harness`]: image and token file I/O, the captioner subprocess protocol,
//!   the cutoff sweep and the `mfp` command line.
//!
//! The numeric modules are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`, which is what the file formats and
//! the command line use.

pub mod encoder;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod rng;
mod scalar;
pub mod spectral;

pub use error::{Error, ImageError, OracleError, Result};
pub use scalar::Scalar;

pub type Plane = spectral::Plane<f64>;
pub type Image = spectral::Image<f64>;
pub type Spectrum = spectral::Spectrum<f64>;
pub type FilterMask = spectral::FilterMask<f64>;
pub type Matrix = linalg::Matrix<f64>;
pub type TokenSequence = linalg::TokenSequence<f64>;
pub type FusionParams = fusion::FusionParams<f64>;
pub type FusionGradients = fusion::FusionGradients<f64>;
