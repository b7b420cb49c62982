//! Built-in toy sound library. Each class is a parametric template with one
//! active region per clip; silence elsewhere. Classes come in spectrally
//! neighbouring pairs (low, mid, high bands) so that a wrongly queried class
//! can pull in a neighbour's energy.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::audio::{AudioClip, SAMPLE_RATE};
use crate::error::{Result, TseError};

pub const TOY_CLASS_NAMES: [&str; 8] =
    ["hum", "chirp", "hiss_mid", "beep", "hiss_high", "clicks", "whistle", "rumble"];

const MIN_ACTIVE_S: f64 = 0.5;
const MAX_ACTIVE_S: f64 = 3.0;
const FADE_S: f64 = 0.01;
const BASE_RMS: f64 = 0.1;

/// Deterministic toy stem for `class_index` at 16 kHz.
pub fn synthesize_toy_stem(class_index: usize, duration_samples: usize, rng_seed: u64) -> Result<AudioClip> {
    toy_stem(class_index, duration_samples, SAMPLE_RATE, rng_seed)
}

pub(crate) fn toy_stem(class: usize, len: usize, rate: u32, seed: u64) -> Result<AudioClip> {
    if class >= TOY_CLASS_NAMES.len() {
        return Err(TseError::UnknownClass { index: class, classes: TOY_CLASS_NAMES.len() });
    }
    let fs = rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clip_s = len as f64 / fs;
    let max_active = MAX_ACTIVE_S.min(clip_s);
    let min_active = MIN_ACTIVE_S.min(max_active);
    let active_s = if max_active > min_active { rng.random_range(min_active..=max_active) } else { max_active };
    let active = ((active_s * fs).round() as usize).clamp(1, len.max(1)).min(len);
    let onset = if len > active { rng.random_range(0..=len - active) } else { 0 };
    let level_db: f64 = rng.random_range(-6.0..=0.0);

    let mut body = match class {
        0 => harmonic(&mut rng, active, fs),
        1 => chirp(&mut rng, active, fs),
        2 => {
            let centre = rng.random_range(1300.0..1700.0);
            let width = rng.random_range(400.0..800.0);
            band_noise(&mut rng, active, fs, centre - width / 2.0, centre + width / 2.0)
        }
        3 => beep(&mut rng, active, fs),
        4 => {
            let centre = rng.random_range(3500.0..4500.0);
            let width = rng.random_range(600.0..1200.0);
            band_noise(&mut rng, active, fs, centre - width / 2.0, centre + width / 2.0)
        }
        5 => clicks(&mut rng, active, fs),
        6 => whistle(&mut rng, active, fs),
        _ => {
            let centre = rng.random_range(180.0..320.0);
            let width = rng.random_range(100.0..200.0);
            band_noise(&mut rng, active, fs, centre - width / 2.0, centre + width / 2.0)
        }
    };

    let fade = ((FADE_S * fs) as usize).min(active / 2).max(1);
    for i in 0..fade.min(active) {
        let g = 0.5 * (1.0 - (PI * (i as f64 + 0.5) / fade as f64).cos());
        body[i] *= g;
        body[active - 1 - i] *= g;
    }
    let rms = (body.iter().map(|v| v * v).sum::<f64>() / active as f64).sqrt();
    let scale = if rms > 0.0 { BASE_RMS * 10f64.powf(level_db / 20.0) / rms } else { 0.0 };
    let mut samples = vec![0.0; len];
    for (dst, v) in samples[onset..onset + active].iter_mut().zip(&body) {
        *dst = v * scale;
    }
    AudioClip::new(samples, rate)
}

/// Low-passed Gaussian noise over the whole clip, unit RMS.
pub fn synthesize_background(len: usize, rate: u32, seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pole = rng.random_range(0.90..0.97);
    let white_mix = rng.random_range(0.05..0.2);
    let mut state = 0.0;
    let mut out: Vec<f64> = (0..len)
        .map(|_| {
            let w: f64 = rng.sample(StandardNormal);
            state = pole * state + (1.0 - pole) * w;
            state + white_mix * w
        })
        .collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    AudioClip::new(out, rate).expect("finite noise")
}

/// Sum of unit phasors advanced by complex rotation; cheaper than per-sample `sin`.
fn oscillator_bank(freqs: &[f64], amps: &[f64], phases: &[f64], n: usize, fs: f64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for ((&f, &a), &ph) in freqs.iter().zip(amps).zip(phases) {
        let (ws, wc) = (2.0 * PI * f / fs).sin_cos();
        let (mut s, mut c) = ph.sin_cos();
        for o in out.iter_mut() {
            *o += a * s;
            let ns = s * wc + c * ws;
            c = c * wc - s * ws;
            s = ns;
        }
    }
    out
}

fn band_noise(rng: &mut ChaCha8Rng, n: usize, fs: f64, lo: f64, hi: f64) -> Vec<f64> {
    const PARTIALS: usize = 48;
    let freqs: Vec<f64> = (0..PARTIALS).map(|_| rng.random_range(lo..hi)).collect();
    let amps: Vec<f64> = (0..PARTIALS).map(|_| rng.random_range(0.5..1.0)).collect();
    let phases: Vec<f64> = (0..PARTIALS).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    oscillator_bank(&freqs, &amps, &phases, n, fs)
}

fn harmonic(rng: &mut ChaCha8Rng, n: usize, fs: f64) -> Vec<f64> {
    let f0 = rng.random_range(110.0..220.0);
    let freqs: Vec<f64> = (1..=6).map(|k| f0 * k as f64).collect();
    let amps: Vec<f64> = (1..=6).map(|k| 1.0 / k as f64).collect();
    let phases: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    oscillator_bank(&freqs, &amps, &phases, n, fs)
}

fn chirp(rng: &mut ChaCha8Rng, n: usize, fs: f64) -> Vec<f64> {
    let period = rng.random_range(0.2..0.5);
    let f_lo = rng.random_range(500.0..800.0);
    let f_hi = rng.random_range(2500.0..3500.0);
    let upward = rng.random_bool(0.5);
    let mut phase = rng.random_range(0.0..2.0 * PI);
    (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            let frac = (t / period).fract();
            let frac = if upward { frac } else { 1.0 - frac };
            let f = f_lo + (f_hi - f_lo) * frac;
            phase += 2.0 * PI * f / fs;
            phase.sin()
        })
        .collect()
}

fn beep(rng: &mut ChaCha8Rng, n: usize, fs: f64) -> Vec<f64> {
    let carrier = rng.random_range(1200.0..1800.0);
    let rate = rng.random_range(3.0..8.0);
    let phase = rng.random_range(0.0..2.0 * PI);
    let gate_phase = rng.random_range(0.0..2.0 * PI);
    let tone = oscillator_bank(&[carrier], &[1.0], &[phase], n, fs);
    tone.into_iter()
        .enumerate()
        .map(|(i, v)| {
            let t = i as f64 / fs;
            let gate = 0.5 * (1.0 + (8.0 * (2.0 * PI * rate * t + gate_phase).sin()).tanh());
            v * (0.05 + 0.95 * gate)
        })
        .collect()
}

fn clicks(rng: &mut ChaCha8Rng, n: usize, fs: f64) -> Vec<f64> {
    let rate = rng.random_range(6.0..14.0);
    let tau = rng.random_range(0.002..0.004) * fs;
    let spacing = (fs / rate).max(1.0) as usize;
    let mut out = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let amp = rng.random_range(0.6..1.0);
        let end = (start + spacing).min(n);
        for (k, o) in out[start..end].iter_mut().enumerate() {
            let w: f64 = rng.sample(StandardNormal);
            *o = amp * w * (-(k as f64) / tau).exp();
        }
        start += spacing;
    }
    out
}

fn whistle(rng: &mut ChaCha8Rng, n: usize, fs: f64) -> Vec<f64> {
    let carrier = rng.random_range(3600.0..4400.0);
    let vib_rate = rng.random_range(4.0..7.0);
    let vib_depth = rng.random_range(50.0..150.0);
    let mut phase = rng.random_range(0.0..2.0 * PI);
    (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            let f = carrier + vib_depth * (2.0 * PI * vib_rate * t).sin();
            phase += 2.0 * PI * f / fs;
            phase.sin()
        })
        .collect()
}
