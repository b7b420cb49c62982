//! Learnable analysis/synthesis filterbanks: a strided bias-free convolution with
//! ReLU, and its transposed counterpart with overlap-add.

use ndarray::linalg::general_mat_mul;
use ndarray::Array2;
use rand::Rng;

use super::layers::uniform;
use super::params::impl_params;
use crate::error::{Result, TseError};
use crate::float::Float;

/// `floor((len − window) / hop) + 1`.
pub fn frame_count(len: usize, window: usize, hop: usize) -> Result<usize> {
    if len < window {
        return Err(TseError::TooShort { samples: len, window });
    }
    Ok((len - window) / hop + 1)
}

/// Strided framing: column `l` holds `x[l·hop .. l·hop + window]`.
pub(crate) fn frames<T: Float>(x: &[T], window: usize, hop: usize) -> Result<Array2<T>> {
    let frames = frame_count(x.len(), window, hop)?;
    Ok(Array2::from_shape_fn((window, frames), |(k, l)| x[l * hop + k]))
}

#[derive(Debug, Clone)]
pub struct Encoder<T> {
    /// `filters × window`.
    pub weight: Array2<T>,
}
impl_params!(Encoder { weight });

impl<T: Float> Encoder<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, filters: usize, window: usize) -> Self {
        Self { weight: uniform(rng, (filters, window), 1.0 / (window as f64).sqrt()) }
    }

    /// Returns `(features, frames)`; the framed input is kept for the backward pass.
    pub fn forward(&self, x: &[T], hop: usize) -> Result<(Array2<T>, Array2<T>)> {
        let framed = frames(x, self.weight.ncols(), hop)?;
        let mut feats = self.weight.dot(&framed);
        feats.mapv_inplace(|v| v.max(T::zero()));
        Ok((feats, framed))
    }

    pub fn backward(&self, framed: &Array2<T>, feats: &Array2<T>, d_feats: Array2<T>, grad: &mut Self) {
        let mut d_pre = d_feats;
        d_pre.zip_mut_with(feats, |d, &f| {
            if f <= T::zero() {
                *d = T::zero();
            }
        });
        general_mat_mul(T::one(), &d_pre, &framed.t(), T::one(), &mut grad.weight);
    }
}

#[derive(Debug, Clone)]
pub struct Decoder<T> {
    /// `window × filters`.
    pub weight: Array2<T>,
}
impl_params!(Decoder { weight });

impl<T: Float> Decoder<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, filters: usize, window: usize) -> Self {
        Self { weight: uniform(rng, (window, filters), 1.0 / (filters as f64).sqrt()) }
    }

    /// Transposed convolution; the result is zero-padded to exactly `len` samples.
    pub fn forward(&self, feats: &Array2<T>, hop: usize, len: usize) -> Vec<T> {
        let basis = self.weight.dot(feats);
        let window = self.weight.nrows();
        let mut out = vec![T::zero(); len];
        for (l, col) in basis.columns().into_iter().enumerate() {
            let start = l * hop;
            for (k, &v) in col.iter().enumerate().take(len.saturating_sub(start).min(window)) {
                out[start + k] += v;
            }
        }
        out
    }

    /// Overlap-add is adjoint to framing, so the output gradient is simply re-framed.
    pub fn backward(&self, feats: &Array2<T>, d_out: &[T], hop: usize, grad: &mut Self) -> Array2<T> {
        let window = self.weight.nrows();
        let d_basis = Array2::from_shape_fn((window, feats.ncols()), |(k, l)| {
            d_out.get(l * hop + k).copied().unwrap_or_else(T::zero)
        });
        general_mat_mul(T::one(), &d_basis, &feats.t(), T::one(), &mut grad.weight);
        self.weight.t().dot(&d_basis)
    }
}
