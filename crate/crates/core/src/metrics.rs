//! Signal-comparison metrics: SNR, SNR improvement, attenuation ratio and macro F1.
//!
//! All energies are accumulated in `f64`. Degenerate cases return infinite
//! sentinels rather than capped values; aggregation decides how to cap.

use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Result, TseError};

/// Floor applied to the estimate energy in [`attenuation_ratio`].
pub const ENERGY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Snr,
    Snri,
    Attenuation,
    F1,
}

/// A scalar metric. dB for everything except `F1`, which is unitless in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    pub kind: MetricKind,
}

impl MetricValue {
    fn new(value: f64, kind: MetricKind) -> Self {
        Self { value, kind }
    }
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(TseError::LengthMismatch { expected: a.len(), actual: b.len() });
    }
    Ok(())
}

pub(crate) fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn residual_energy(reference: &[f64], estimate: &[f64]) -> f64 {
    reference.iter().zip(estimate).map(|(r, e)| (r - e) * (r - e)).sum()
}

/// SNR on raw sample slices; see [`snr`].
pub fn snr_samples(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    check_len(reference, estimate)?;
    let signal = energy(reference);
    if signal == 0.0 {
        return Err(TseError::ZeroReference);
    }
    let noise = residual_energy(reference, estimate);
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / noise).log10())
}

/// `10·log10(‖ref‖² / ‖ref − est‖²)`, `+∞` when the residual is exactly zero.
pub fn snr(reference: &AudioClip, estimate: &AudioClip) -> Result<MetricValue> {
    Ok(MetricValue::new(snr_samples(reference.samples(), estimate.samples())?, MetricKind::Snr))
}

pub fn snr_improvement_samples(target: &[f64], estimate: &[f64], mixture: &[f64]) -> Result<f64> {
    check_len(target, mixture)?;
    let baseline = snr_samples(target, mixture)?;
    if baseline.is_infinite() {
        return Err(TseError::InfiniteBaseline);
    }
    let improved = snr_samples(target, estimate)?;
    Ok(improved - baseline)
}

/// `snr(target, estimate) − snr(target, mixture)`.
pub fn snr_improvement(target: &AudioClip, estimate: &AudioClip, mixture: &AudioClip) -> Result<MetricValue> {
    let v = snr_improvement_samples(target.samples(), estimate.samples(), mixture.samples())?;
    Ok(MetricValue::new(v, MetricKind::Snri))
}

pub fn attenuation_ratio_samples(mixture: &[f64], estimate: &[f64]) -> Result<f64> {
    check_len(mixture, estimate)?;
    let mix = energy(mixture);
    if mix == 0.0 {
        return Err(TseError::ZeroMixture);
    }
    let est = energy(estimate).max(ENERGY_FLOOR);
    Ok(-10.0 * (mix / est).log10())
}

/// Attenuation of the estimate relative to the mixture, `−10·log10(‖x‖² / ‖ŝ‖²)`.
/// Lower is better; silent estimates hit the energy floor.
pub fn attenuation_ratio(mixture: &AudioClip, estimate: &AudioClip) -> Result<MetricValue> {
    let v = attenuation_ratio_samples(mixture.samples(), estimate.samples())?;
    Ok(MetricValue::new(v, MetricKind::Attenuation))
}

/// Per-class confusion counts at a fixed threshold (`p ≥ threshold` is positive).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    /// F1 with the convention that a class never labelled and never predicted scores 1.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    /// Fraction of inactive instances predicted active.
    pub fn fp_rate(&self) -> f64 {
        let n = self.fp + self.tn;
        if n == 0 { 0.0 } else { self.fp as f64 / n as f64 }
    }

    /// Fraction of active instances predicted inactive.
    pub fn fn_rate(&self) -> f64 {
        let n = self.fn_ + self.tp;
        if n == 0 { 0.0 } else { self.fn_ as f64 / n as f64 }
    }
}

pub fn confusion_per_class(clip_probs: &[Vec<f64>], labels: &[Vec<bool>], threshold: f64) -> Result<Vec<Confusion>> {
    if clip_probs.len() != labels.len() {
        return Err(TseError::ShapeMismatch(format!(
            "{} probability rows vs {} label rows",
            clip_probs.len(),
            labels.len()
        )));
    }
    let classes = labels.first().map(Vec::len).or_else(|| clip_probs.first().map(Vec::len)).unwrap_or(0);
    let mut out = vec![Confusion::default(); classes];
    for (row, (p, y)) in clip_probs.iter().zip(labels).enumerate() {
        if p.len() != classes || y.len() != classes {
            return Err(TseError::ShapeMismatch(format!("row {row} has {} probs / {} labels, expected {classes}", p.len(), y.len())));
        }
        for (c, (&pv, &yv)) in p.iter().zip(y).enumerate() {
            if !(0.0..=1.0).contains(&pv) {
                return Err(TseError::ShapeMismatch(format!("probability {pv} at row {row}, class {c} outside [0, 1]")));
            }
            let conf = &mut out[c];
            match (pv >= threshold, yv) {
                (true, true) => conf.tp += 1,
                (true, false) => conf.fp += 1,
                (false, true) => conf.fn_ += 1,
                (false, false) => conf.tn += 1,
            }
        }
    }
    Ok(out)
}

/// Macro-averaged F1 over classes. Rows are samples, columns are classes.
pub fn macro_f1(clip_probs: &[Vec<f64>], labels: &[Vec<bool>], threshold: f64) -> Result<MetricValue> {
    let per_class = confusion_per_class(clip_probs, labels, threshold)?;
    if per_class.is_empty() {
        return Err(TseError::ShapeMismatch("no classes".into()));
    }
    let mean = per_class.iter().map(Confusion::f1).sum::<f64>() / per_class.len() as f64;
    Ok(MetricValue::new(mean, MetricKind::F1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::SAMPLE_RATE;
    use proptest::prelude::*;

    fn clip(v: &[f64]) -> AudioClip {
        AudioClip::new(v.to_vec(), SAMPLE_RATE).unwrap()
    }

    #[test]
    fn snr_closed_forms() {
        let r = clip(&[0.3, -0.1, 0.7, 0.2, -0.5]);
        let half = r.scaled(0.5);
        assert!((snr(&r, &half).unwrap().value - 20.0 * 2f64.log10()).abs() < 1e-9);
        assert!((snr(&r, &half).unwrap().value - 6.0206).abs() < 1e-4);
        assert_eq!(snr(&r, &r).unwrap().value, f64::INFINITY);
        let v = snr(&clip(&[1.0, 0.0, 0.0, 0.0]), &clip(&[1.0, 1.0, 0.0, 0.0])).unwrap();
        assert_eq!(v.value, 0.0);
    }

    #[test]
    fn snr_errors() {
        assert!(matches!(snr(&clip(&[1.0]), &clip(&[1.0, 2.0])), Err(TseError::LengthMismatch { .. })));
        assert!(matches!(snr(&clip(&[0.0, 0.0]), &clip(&[1.0, 2.0])), Err(TseError::ZeroReference)));
    }

    #[test]
    fn snri_identities() {
        let s = clip(&[0.3, -0.1, 0.7, 0.2]);
        let x = clip(&[0.5, 0.1, 0.6, -0.2]);
        assert_eq!(snr_improvement(&s, &x, &x).unwrap().value, 0.0);
        assert_eq!(snr_improvement(&s, &s, &x).unwrap().value, f64::INFINITY);
        assert!(matches!(snr_improvement(&s, &x, &s), Err(TseError::InfiniteBaseline)));
    }

    #[test]
    fn attenuation_closed_forms() {
        let x = clip(&[0.3, -0.1, 0.7, 0.2]);
        assert_eq!(attenuation_ratio(&x, &x).unwrap().value, 0.0);
        assert!((attenuation_ratio(&x, &x.scaled(0.1)).unwrap().value + 20.0).abs() < 1e-9);
        let silent = AudioClip::zeros(4, SAMPLE_RATE);
        let expected = -10.0 * (x.energy() / ENERGY_FLOOR).log10();
        assert_eq!(attenuation_ratio(&x, &silent).unwrap().value, expected);
        assert!(matches!(attenuation_ratio(&silent, &x), Err(TseError::ZeroMixture)));
    }

    fn fixture() -> (Vec<Vec<f64>>, Vec<Vec<bool>>) {
        let probs = vec![
            vec![0.9, 0.6, 0.2],
            vec![0.1, 0.7, 0.8],
            vec![0.4, 0.3, 0.1],
            vec![0.7, 0.2, 0.55],
        ];
        let labels = vec![
            vec![true, false, true],
            vec![false, true, true],
            vec![true, true, false],
            vec![false, false, true],
        ];
        (probs, labels)
    }

    #[test]
    fn macro_f1_hand_counted_fixture() {
        // class 0: TP1 FP1 FN1 -> 0.5; class 1: TP1 FP1 FN1 -> 0.5; class 2: TP2 FN1 -> 0.8
        let (p, y) = fixture();
        let f1 = macro_f1(&p, &y, 0.5).unwrap().value;
        assert!((f1 - 0.6).abs() < 1e-12);
    }

    #[test]
    fn macro_f1_edges() {
        let (_, y) = fixture();
        let exact: Vec<Vec<f64>> = y.iter().map(|r| r.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()).collect();
        assert_eq!(macro_f1(&exact, &y, 0.5).unwrap().value, 1.0);
        let all_pos = vec![vec![true; 3]; 4];
        let low = vec![vec![0.1; 3]; 4];
        assert_eq!(macro_f1(&low, &all_pos, 0.5).unwrap().value, 0.0);
        assert!(matches!(macro_f1(&low[..3], &all_pos, 0.5), Err(TseError::ShapeMismatch(_))));
        // absent and never predicted -> F1 of 1
        let none = vec![vec![false; 3]; 4];
        assert_eq!(macro_f1(&low, &none, 0.5).unwrap().value, 1.0);
    }

    proptest! {
        #[test]
        fn snr_scale_covariant(v in prop::collection::vec(-1.0f64..1.0, 8..64), noise in prop::collection::vec(-0.2f64..0.2, 64), a in prop_oneof![-100.0f64..-0.01, 0.01f64..100.0]) {
            prop_assume!(energy(&v) > 1e-6);
            let est: Vec<f64> = v.iter().zip(&noise).map(|(s, n)| s + n).collect();
            prop_assume!(residual_energy(&v, &est) > 1e-12);
            let base = snr_samples(&v, &est).unwrap();
            let sv: Vec<f64> = v.iter().map(|s| a * s).collect();
            let se: Vec<f64> = est.iter().map(|s| a * s).collect();
            prop_assert!((snr_samples(&sv, &se).unwrap() - base).abs() < 1e-9);
        }

        #[test]
        fn attenuation_of_scaled_mixture(v in prop::collection::vec(-1.0f64..1.0, 8..64), a in prop_oneof![-10.0f64..-0.01, 0.01f64..10.0]) {
            prop_assume!(energy(&v) > 1e-6);
            let est: Vec<f64> = v.iter().map(|s| a * s).collect();
            let got = attenuation_ratio_samples(&v, &est).unwrap();
            prop_assert!((got - 20.0 * a.abs().log10()).abs() < 1e-9);
        }

        #[test]
        fn snri_zero_when_estimate_is_mixture(s in prop::collection::vec(-1.0f64..1.0, 16), n in prop::collection::vec(-1.0f64..1.0, 16)) {
            prop_assume!(energy(&s) > 1e-6);
            let x: Vec<f64> = s.iter().zip(&n).map(|(a, b)| a + b).collect();
            prop_assume!(residual_energy(&s, &x) > 0.0);
            prop_assert_eq!(snr_improvement_samples(&s, &x, &x).unwrap(), 0.0);
        }

        #[test]
        fn macro_f1_permutation_invariant(rows in prop::collection::vec((prop::collection::vec(0.0f64..1.0, 4), prop::collection::vec(any::<bool>(), 4)), 1..20), seed in any::<u64>()) {
            let (p, y): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
            let mut idx: Vec<usize> = (0..p.len()).collect();
            let mut s = seed;
            for i in (1..idx.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                idx.swap(i, (s >> 33) as usize % (i + 1));
            }
            let pp: Vec<_> = idx.iter().map(|&i| p[i].clone()).collect();
            let yy: Vec<_> = idx.iter().map(|&i| y[i].clone()).collect();
            prop_assert_eq!(macro_f1(&p, &y, 0.5).unwrap().value, macro_f1(&pp, &yy, 0.5).unwrap().value);
        }
    }
}
