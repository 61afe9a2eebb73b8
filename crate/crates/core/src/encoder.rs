//! Linear patch encoder standing in for a vision backbone.
//!
//! Each non-overlapping `p x p` patch is flattened row-major with the three
//! channels interleaved (`[(r0,c0,R), (r0,c0,G), (r0,c0,B), (r0,c1,R), ...]`)
//! and multiplied by a fixed `3p^2 x dim` projection. The same encoder is
//! applied to the original image and to both frequency components.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, TokenSequence};
use crate::rng;
use crate::spectral::Image;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub patch_size: usize,
    pub dim: usize,
    pub projection_seed: u64,
}

/// Anything that turns an image into a token sequence.
pub trait TokenSource<T: Scalar> {
    fn encode(&self, image: &Image<T>) -> Result<TokenSequence<T>>;
}

#[derive(Debug, Clone)]
pub struct PatchEncoder<T> {
    config: EncoderConfig,
    projection: Matrix<T>,
}

impl<T: Scalar> PatchEncoder<T> {
    /// Draws the projection row-major from `U[-b, b)`, `b = 1 / sqrt(3 p^2)`.
    pub fn new(config: EncoderConfig) -> Result<Self> {
        if config.patch_size == 0 {
            return Err(Error::InvalidArgument("patch_size must be at least 1".into()));
        }
        if config.dim == 0 {
            return Err(Error::InvalidArgument("dim must be at least 1".into()));
        }
        let raw = 3 * config.patch_size * config.patch_size;
        let bound = 1.0 / (raw as f64).sqrt();
        let mut r = rng::seeded(config.projection_seed);
        let projection = Matrix::from_fn(raw, config.dim, |_, _| rng::uniform(&mut r, -bound, bound));
        Ok(Self { config, projection })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// The `3p^2 x dim` projection matrix.
    pub fn projection(&self) -> &Matrix<T> {
        &self.projection
    }

    /// Number of tokens produced for an `h x w` image.
    pub fn token_count(&self, height: usize, width: usize) -> Result<usize> {
        let p = self.config.patch_size;
        if !height.is_multiple_of(p) || !width.is_multiple_of(p) {
            return Err(Error::Dimension(format!(
                "patch_size {p} must divide image height {height} and width {width}"
            )));
        }
        Ok((height / p) * (width / p))
    }
}

impl<T: Scalar> TokenSource<T> for PatchEncoder<T> {
    fn encode(&self, image: &Image<T>) -> Result<TokenSequence<T>> {
        let (h, w) = image.dims();
        let len = self.token_count(h, w)?;
        let p = self.config.patch_size;
        let mut raw = Vec::with_capacity(3 * p * p);
        let mut data = Vec::with_capacity(len * self.config.dim);
        for py in 0..h / p {
            for px in 0..w / p {
                raw.clear();
                for r in 0..p {
                    for c in 0..p {
                        raw.extend(image.pixel(py * p + r, px * p + c));
                    }
                }
                data.extend(self.projection.left_mul(&raw));
            }
        }
        TokenSequence::new(len, self.config.dim, data)
    }
}

/// Convenience wrapper: build the encoder from `config` and encode once.
pub fn patch_tokens<T: Scalar>(image: &Image<T>, config: EncoderConfig) -> Result<TokenSequence<T>> {
    PatchEncoder::new(config)?.encode(image)
}
