//! Adam with bias correction and optional global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::model::{ModelParams, Params};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

pub struct Adam {
    cfg: AdamConfig,
    m: ModelParams<f32>,
    v: ModelParams<f32>,
    t: i32,
}

impl Adam {
    pub fn new(params: &ModelParams<f32>, cfg: AdamConfig) -> Self {
        Self { cfg, m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut ModelParams<f32>, grad: &ModelParams<f32>, lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let step = (lr * c2.sqrt() / c1) as f32;
        let eps = (self.cfg.eps * c2.sqrt()) as f32;
        let (b1, b2) = (b1 as f32, b2 as f32);
        let g = grad.tensors();
        let tensors = params.tensors_mut().into_iter().zip(self.m.tensors_mut()).zip(self.v.tensors_mut()).zip(g);
        for ((((_, p), (_, m)), (_, v)), (_, g)) in tensors {
            for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step * *m / (v.sqrt() + eps);
            }
        }
    }
}

/// Rescales `grad` so its global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grad: &mut ModelParams<f32>, max_norm: f64) -> f64 {
    let norm = grad.sq_norm().sqrt();
    if norm > max_norm {
        grad.scale((max_norm / norm) as f32);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, TseModel};

    #[test]
    fn first_step_moves_each_weight_by_lr() {
        let mut model = TseModel::<f32>::new(ModelConfig::miniature(3, false), 0).unwrap();
        let before = model.params.clone();
        let mut grad = model.params.zeros_like();
        for (_, t) in grad.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.5);
        }
        let mut adam = Adam::new(&model.params, AdamConfig::default());
        adam.step(&mut model.params, &grad, 1e-3);
        for ((_, a), (_, b)) in before.tensors().into_iter().zip(model.params.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!(((x - y) - 1e-3).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn clipping_caps_the_norm() {
        let model = TseModel::<f32>::new(ModelConfig::miniature(3, false), 0).unwrap();
        let mut grad = model.params.clone();
        let n = clip_grad_norm(&mut grad, 0.5);
        assert!(n > 0.5);
        assert!((grad.sq_norm().sqrt() - 0.5).abs() < 1e-4);
    }
}
