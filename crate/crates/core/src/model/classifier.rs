//! Weakly-supervised event classifier: two BiGRU layers, a per-frame linear
//! layer with sigmoid, and linear-softmax pooling to clip level.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;

use super::gru::{BiGru, BiGruCache};
use super::layers::{sigmoid, Pointwise};
use super::params::impl_params;
use crate::float::Float;

/// Frame-level and clip-level presence probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrediction<T> {
    /// `classes × frames`.
    pub frame_probs: Array2<T>,
    pub clip_probs: Array1<T>,
}

impl<T: Float> ClassPrediction<T> {
    pub fn clip_probs_f64(&self) -> Vec<f64> {
        self.clip_probs.iter().map(|v| v.as_f64()).collect()
    }
}

/// `Σ p² / Σ p` per row, with `0/0 = 0`.
pub fn linear_softmax_pool<T: Float>(frame_probs: &Array2<T>) -> Array1<T> {
    Array1::from_iter(frame_probs.rows().into_iter().map(|row| {
        let s1 = row.iter().copied().sum::<T>();
        let s2 = row.iter().map(|&p| p * p).sum::<T>();
        if s1 > T::zero() {
            s2 / s1
        } else {
            T::zero()
        }
    }))
}

#[derive(Debug, Clone)]
pub struct Classifier<T> {
    pub gru1: BiGru<T>,
    pub gru2: BiGru<T>,
    pub out: Pointwise<T>,
}
impl_params!(Classifier { gru1, gru2, out });

pub struct ClassifierCache<T> {
    g1: BiGruCache<T>,
    g2: BiGruCache<T>,
    h2: Array2<T>,
    probs: Array2<T>,
}

impl<T: Float> Classifier<T> {
    /// `width` is the concatenated BiGRU output size (per-direction `width / 2`).
    pub fn new<R: Rng + ?Sized>(rng: &mut R, input: usize, width: usize, classes: usize) -> Self {
        let h = width / 2;
        Self { gru1: BiGru::new(rng, input, h), gru2: BiGru::new(rng, width, h), out: Pointwise::new(rng, classes, width, true) }
    }

    pub fn forward(&self, z: ArrayView2<T>) -> ClassPrediction<T> {
        let h1 = self.gru1.forward(z);
        let h2 = self.gru2.forward(h1.view());
        let frame_probs = self.out.forward(h2.view()).mapv(sigmoid);
        let clip_probs = linear_softmax_pool(&frame_probs);
        ClassPrediction { frame_probs, clip_probs }
    }

    pub fn forward_train(&self, z: Array2<T>) -> (ClassPrediction<T>, ClassifierCache<T>) {
        let (h1, g1) = self.gru1.forward_train(z);
        let (h2, g2) = self.gru2.forward_train(h1);
        let frame_probs = self.out.forward(h2.view()).mapv(sigmoid);
        let clip_probs = linear_softmax_pool(&frame_probs);
        let cache = ClassifierCache { g1, g2, h2, probs: frame_probs.clone() };
        (ClassPrediction { frame_probs, clip_probs }, cache)
    }

    /// Backpropagates `dL/dclip_probs` to the shared features.
    pub fn backward(&self, cache: &ClassifierCache<T>, d_clip: &[T], grad: &mut Self) -> Array2<T> {
        let probs = &cache.probs;
        let mut d_logits = Array2::<T>::zeros(probs.raw_dim());
        for (c, (row, mut drow)) in probs.rows().into_iter().zip(d_logits.rows_mut()).enumerate() {
            let s1 = row.iter().copied().sum::<T>();
            if !(s1 > T::zero()) {
                continue;
            }
            let s2 = row.iter().map(|&p| p * p).sum::<T>();
            let pooled = s2 / s1;
            let two = T::lit(2.0);
            for (d, &p) in drow.iter_mut().zip(row) {
                let d_p = d_clip[c] * (two * p - pooled) / s1;
                *d = d_p * p * (T::one() - p);
            }
        }
        let dh2 = self.out.backward(cache.h2.view(), d_logits.view(), &mut grad.out);
        let dh1 = self.gru2.backward(&cache.g2, dh2.view(), &mut grad.gru2);
        self.gru1.backward(&cache.g1, dh1.view(), &mut grad.gru1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_closed_forms() {
        let p = Array2::<f64>::from_shape_vec((4, 2), vec![0.3, 0.3, 1.0, 0.0, 0.2, 0.8, 0.0, 0.0]).unwrap();
        let c = linear_softmax_pool(&p);
        assert!((c[0] - 0.3).abs() < 1e-15);
        assert_eq!(c[1], 1.0);
        assert!((c[2] - 0.68).abs() < 1e-15);
        assert_eq!(c[3], 0.0);
    }
}
