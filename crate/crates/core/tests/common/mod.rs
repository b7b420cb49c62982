#![allow(dead_code)]

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use tse_core::audio::AudioClip;
use tse_core::model::{ModelConfig, Params, TseModel};
use tse_core::training::{sample_loss, sample_loss_and_grad, TrainingSample};
use tse_core::Query;

/// Writes straight to the process stderr so the line shows even when libtest captures output.
pub fn emit(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| { let z: f64 = StandardNormal.sample(&mut *rng); scale * z }).collect()
}

/// A hand-built example: two random sources plus noise, querying the first.
pub fn random_example(classes: usize, len: usize, seed: u64, inactive: bool) -> TrainingSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = gaussian(&mut rng, len, 0.3);
    let b = gaussian(&mut rng, len, 0.2);
    let n = gaussian(&mut rng, len, 0.02);
    let mix: Vec<f64> = (0..len).map(|i| a[i] + b[i] + n[i]).collect();
    let mut labels = vec![false; classes];
    labels[0] = true;
    labels[1] = true;
    let (query, target) = if inactive {
        (Query::from_indices(classes, &[classes - 1]).unwrap(), vec![0.0; len])
    } else {
        (Query::from_indices(classes, &[0]).unwrap(), a)
    };
    TrainingSample {
        mixture: AudioClip::new(mix, 16000).unwrap(),
        query,
        target: AudioClip::new(target, 16000).unwrap(),
        is_inactive_sample: inactive,
        labels,
    }
}

pub struct GradCheck {
    pub probes: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

/// Fourth-order central-difference check of the total-loss gradient over `probes` parameters
/// (every tensor at least once, the rest uniformly at random).
pub fn gradient_check(
    cfg: ModelConfig,
    example: &TrainingSample,
    lambda: f64,
    probes: usize,
    seed: u64,
) -> GradCheck {
    const H: f64 = 1e-5;
    const FLOOR: f64 = 1e-6;
    let mut model = TseModel::<f64>::new(cfg, seed).unwrap();
    let mut grad = model.params.zeros_like();
    sample_loss_and_grad(&model, example, 30.0, lambda, &mut grad).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = grad.tensors().into_iter().map(|(n, t)| (n, t.to_vec())).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let mut targets: Vec<(usize, usize)> =
        analytic.iter().enumerate().map(|(t, (_, v))| (t, rng.random_range(0..v.len()))).collect();
    let total: usize = analytic.iter().map(|(_, v)| v.len()).sum();
    while targets.len() < probes {
        let mut flat = rng.random_range(0..total);
        for (t, (_, v)) in analytic.iter().enumerate() {
            if flat < v.len() {
                targets.push((t, flat));
                break;
            }
            flat -= v.len();
        }
    }

    let mut max_rel_err: f64 = 0.0;
    let mut worst = String::new();
    for &(t, k) in &targets {
        let orig = model.params.tensors()[t].1[k];
        let mut eval_at = |v: f64| {
            model.params.tensors_mut()[t].1[k] = v;
            sample_loss(&model, example, 30.0, lambda).unwrap().total
        };
        let f = [eval_at(orig + 2.0 * H), eval_at(orig + H), eval_at(orig - H), eval_at(orig - 2.0 * H)];
        eval_at(orig);
        let numeric = (-f[0] + 8.0 * f[1] - 8.0 * f[2] + f[3]) / (12.0 * H);
        let a = analytic[t].1[k];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
        if rel > max_rel_err {
            max_rel_err = rel;
            worst = format!("{}[{k}]: analytic {a:.6e}, numeric {numeric:.6e}", analytic[t].0);
        }
    }
    GradCheck { probes: targets.len(), max_rel_err, worst }
}
