//! Building blocks with hand-written backward passes. Activations are laid out
//! `channels × frames`, row-major.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use super::params::impl_params;
use crate::float::Float;

/// Normalisation epsilon for gLN.
pub const GLN_EPS: f64 = 1e-8;

pub(crate) fn uniform<T: Float, R: Rng + ?Sized>(rng: &mut R, shape: (usize, usize), bound: f64) -> Array2<T> {
    Array2::from_shape_simple_fn(shape, || T::lit(rng.random_range(-bound..=bound)))
}

pub(crate) fn uniform1<T: Float, R: Rng + ?Sized>(rng: &mut R, len: usize, bound: f64) -> Array1<T> {
    Array1::from_shape_simple_fn(len, || T::lit(rng.random_range(-bound..=bound)))
}

/// 1×1 convolution (a per-frame linear map).
#[derive(Debug, Clone)]
pub struct Pointwise<T> {
    pub weight: Array2<T>,
    pub bias: Option<Array1<T>>,
}
impl_params!(Pointwise { weight, bias });

impl<T: Float> Pointwise<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, out: usize, inp: usize, bias: bool) -> Self {
        let bound = 1.0 / (inp as f64).sqrt();
        Self { weight: uniform(rng, (out, inp), bound), bias: bias.then(|| uniform1(rng, out, bound)) }
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        let mut y = self.weight.dot(&x);
        if let Some(b) = &self.bias {
            y += &b.view().insert_axis(Axis(1));
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: ArrayView2<T>, dy: ArrayView2<T>, grad: &mut Self) -> Array2<T> {
        self.backward_params(x, dy, grad);
        self.weight.t().dot(&dy)
    }

    pub fn backward_params(&self, x: ArrayView2<T>, dy: ArrayView2<T>, grad: &mut Self) {
        general_mat_mul(T::one(), &dy, &x.t(), T::one(), &mut grad.weight);
        if let Some(gb) = &mut grad.bias {
            *gb += &dy.sum_axis(Axis(1));
        }
    }
}

/// PReLU with one shared slope.
#[derive(Debug, Clone)]
pub struct Prelu<T> {
    pub alpha: Array1<T>,
}
impl_params!(Prelu { alpha });

impl<T: Float> Prelu<T> {
    pub fn new() -> Self {
        Self { alpha: Array1::from_elem(1, T::lit(0.25)) }
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        let a = self.alpha[0];
        x.mapv(|v| if v >= T::zero() { v } else { a * v })
    }

    pub fn backward(&self, x: ArrayView2<T>, dy: ArrayView2<T>, grad: &mut Self) -> Array2<T> {
        let a = self.alpha[0];
        let mut dalpha = T::zero();
        let mut dx = Array2::zeros(x.raw_dim());
        Zip::from(&mut dx).and(&x).and(&dy).for_each(|d, &v, &g| {
            if v >= T::zero() {
                *d = g;
            } else {
                *d = a * g;
                dalpha += g * v;
            }
        });
        grad.alpha[0] += dalpha;
        dx
    }
}

impl<T: Float> Default for Prelu<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Global layer normalisation over all channels and frames of one sample, with
/// per-channel gain and optional shift.
#[derive(Debug, Clone)]
pub struct GlobalLayerNorm<T> {
    pub gamma: Array1<T>,
    pub beta: Option<Array1<T>>,
}
impl_params!(GlobalLayerNorm { gamma, beta });

pub struct GlnCache<T> {
    xhat: Array2<T>,
    inv_std: T,
}

impl<T: Float> GlobalLayerNorm<T> {
    pub fn new(channels: usize, shift: bool) -> Self {
        Self { gamma: Array1::ones(channels), beta: shift.then(|| Array1::zeros(channels)) }
    }

    fn stats(x: ArrayView2<T>) -> (T, T) {
        let n = T::lit(x.len() as f64);
        let mean = x.iter().copied().sum::<T>() / n;
        let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        (mean, T::one() / (var + T::lit(GLN_EPS)).sqrt())
    }

    fn affine(&self, xhat: &mut Array2<T>) {
        for (mut row, &g) in xhat.rows_mut().into_iter().zip(&self.gamma) {
            row.mapv_inplace(|v| v * g);
        }
        if let Some(b) = &self.beta {
            *xhat += &b.view().insert_axis(Axis(1));
        }
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        let (mean, inv) = Self::stats(x);
        let mut y = x.mapv(|v| (v - mean) * inv);
        self.affine(&mut y);
        y
    }

    pub fn forward_train(&self, x: ArrayView2<T>) -> (Array2<T>, GlnCache<T>) {
        let (mean, inv) = Self::stats(x);
        let xhat = x.mapv(|v| (v - mean) * inv);
        let mut y = xhat.clone();
        self.affine(&mut y);
        (y, GlnCache { xhat, inv_std: inv })
    }

    pub fn backward(&self, cache: &GlnCache<T>, dy: ArrayView2<T>, grad: &mut Self) -> Array2<T> {
        let xhat = &cache.xhat;
        let mut g = dy.to_owned();
        for ((mut grow, dyrow), (xrow, (dgamma, &gamma))) in g
            .rows_mut()
            .into_iter()
            .zip(dy.rows())
            .zip(xhat.rows().into_iter().zip(grad.gamma.iter_mut().zip(&self.gamma)))
        {
            *dgamma += dyrow.iter().zip(xrow).map(|(&d, &x)| d * x).sum::<T>();
            grow.mapv_inplace(|v| v * gamma);
        }
        if let Some(db) = &mut grad.beta {
            *db += &dy.sum_axis(Axis(1));
        }
        let n = T::lit(g.len() as f64);
        let mean_g = g.iter().copied().sum::<T>() / n;
        let mean_gx = g.iter().zip(xhat).map(|(&a, &b)| a * b).sum::<T>() / n;
        let inv = cache.inv_std;
        Zip::from(&mut g).and(xhat).for_each(|v, &xh| *v = inv * (*v - mean_g - xh * mean_gx));
        g
    }
}

/// Depthwise dilated convolution with symmetric zero padding ("same" length).
#[derive(Debug, Clone)]
pub struct DepthwiseConv<T> {
    pub weight: Array2<T>,
    pub bias: Option<Array1<T>>,
    pub dilation: usize,
}
impl_params!(DepthwiseConv { weight, bias });

impl<T: Float> DepthwiseConv<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, channels: usize, kernel: usize, dilation: usize, bias: bool) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        let bound = 1.0 / (kernel as f64).sqrt();
        Self {
            weight: uniform(rng, (channels, kernel), bound),
            bias: bias.then(|| uniform1(rng, channels, bound)),
            dilation,
        }
    }

    fn tap_offset(&self, k: usize) -> isize {
        (k as isize - (self.weight.ncols() / 2) as isize) * self.dilation as isize
    }

    /// Output index range `[lo, hi)` for which input index `t + off` is in bounds.
    fn valid(len: usize, off: isize) -> (usize, usize) {
        let lo = (-off).max(0) as usize;
        let hi = (len as isize - off).clamp(0, len as isize) as usize;
        (lo.min(hi), hi)
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        let (channels, len) = x.dim();
        let mut y = Array2::zeros((channels, len));
        for c in 0..channels {
            let xr = x.row(c);
            let xs = xr.as_slice().expect("contiguous rows");
            let mut yr = y.row_mut(c);
            let ys = yr.as_slice_mut().expect("contiguous rows");
            if let Some(b) = &self.bias {
                ys.iter_mut().for_each(|v| *v = b[c]);
            }
            for k in 0..self.weight.ncols() {
                let w = self.weight[[c, k]];
                let off = self.tap_offset(k);
                let (lo, hi) = Self::valid(len, off);
                let src = &xs[(lo as isize + off) as usize..(hi as isize + off) as usize];
                for (o, &v) in ys[lo..hi].iter_mut().zip(src) {
                    *o += w * v;
                }
            }
        }
        y
    }

    pub fn backward(&self, x: ArrayView2<T>, dy: ArrayView2<T>, grad: &mut Self) -> Array2<T> {
        let (channels, len) = x.dim();
        let mut dx = Array2::zeros((channels, len));
        for c in 0..channels {
            let xr = x.row(c);
            let xs = xr.as_slice().expect("contiguous rows");
            let dyr = dy.row(c);
            let ds = dyr.as_slice().expect("contiguous rows");
            let mut dxr = dx.row_mut(c);
            let dxs = dxr.as_slice_mut().expect("contiguous rows");
            if let Some(gb) = &mut grad.bias {
                gb[c] += ds.iter().copied().sum::<T>();
            }
            for k in 0..self.weight.ncols() {
                let w = self.weight[[c, k]];
                let off = self.tap_offset(k);
                let (lo, hi) = Self::valid(len, off);
                let a = (lo as isize + off) as usize;
                let b = (hi as isize + off) as usize;
                let mut dw = T::zero();
                for ((&g, &v), d) in ds[lo..hi].iter().zip(&xs[a..b]).zip(&mut dxs[a..b]) {
                    dw += g * v;
                    *d += w * g;
                }
                grad.weight[[c, k]] += dw;
            }
        }
        dx
    }
}

pub(crate) fn sigmoid<T: Float>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
