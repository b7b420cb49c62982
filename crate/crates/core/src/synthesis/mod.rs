//! Mixture synthesis: foreground stems from a class library plus one background,
//! mixed at a drawn foreground-to-background SNR.

mod dataset;
mod toy;

use std::collections::BTreeMap;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{AudioClip, SAMPLE_RATE};
use crate::error::{Result, TseError};
use crate::query::derive_seed;

pub use dataset::{
    build_dataset, split_seed, DatasetCounts, DatasetManifest, ManifestEntry, ManifestHeader, ManifestSource,
    SampleSource, Split, SyntheticSource,
};
pub use toy::{synthesize_background, synthesize_toy_stem, TOY_CLASS_NAMES};

/// Largest absolute sample value allowed in a mixture.
pub const PEAK_LIMIT: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VocabularySource {
    Toy,
    External,
}

/// Ordered class names; the order defines the index space of every multi-hot vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassVocabulary {
    class_names: Vec<String>,
    source: VocabularySource,
}

impl ClassVocabulary {
    pub fn new(class_names: Vec<String>, source: VocabularySource) -> Result<Self> {
        if class_names.len() < 2 {
            return Err(TseError::InvalidVocabulary(format!("need at least 2 classes, got {}", class_names.len())));
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in &class_names {
            if !seen.insert(name.as_str()) {
                return Err(TseError::InvalidVocabulary(format!("duplicate class name {name:?}")));
            }
        }
        if source == VocabularySource::Toy {
            if class_names.len() > TOY_CLASS_NAMES.len() {
                return Err(TseError::InvalidVocabulary(format!(
                    "toy library has only {} classes",
                    TOY_CLASS_NAMES.len()
                )));
            }
            for (i, name) in class_names.iter().enumerate() {
                if name != TOY_CLASS_NAMES[i] {
                    return Err(TseError::InvalidVocabulary(format!(
                        "toy class {i} must be {:?}, got {name:?}",
                        TOY_CLASS_NAMES[i]
                    )));
                }
            }
        }
        Ok(Self { class_names, source })
    }

    /// The full 8-class toy library.
    pub fn toy() -> Self {
        Self::toy_subset(TOY_CLASS_NAMES.len()).expect("toy library is valid")
    }

    /// The first `classes` toy classes.
    pub fn toy_subset(classes: usize) -> Result<Self> {
        let names = TOY_CLASS_NAMES.iter().take(classes).map(|s| s.to_string()).collect::<Vec<_>>();
        if names.len() != classes {
            return Err(TseError::InvalidVocabulary(format!("toy library has only {} classes", TOY_CLASS_NAMES.len())));
        }
        Self::new(names, VocabularySource::Toy)
    }

    pub fn len(&self) -> usize {
        self.class_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.class_names
    }

    pub fn source(&self) -> VocabularySource {
        self.source
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }

    /// Short content hash used to match checkpoints against datasets.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for name in &self.class_names {
            h.update(name.as_bytes());
            h.update([0u8]);
        }
        let digest = h.finalize();
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Mixing recipe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixturePreset {
    pub n_fg_min: usize,
    pub n_fg_max: usize,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    pub duration_s: f64,
    pub sample_rate: u32,
}

impl MixturePreset {
    /// 3–5 foregrounds, 15–25 dB, 6 s at 16 kHz.
    pub fn paper() -> Self {
        Self { n_fg_min: 3, n_fg_max: 5, snr_min_db: 15.0, snr_max_db: 25.0, duration_s: 6.0, sample_rate: SAMPLE_RATE }
    }

    /// Desk-scale recipe for the 8-class toy library: 2–3 foregrounds in 2 s clips.
    pub fn toy() -> Self {
        Self { n_fg_min: 2, n_fg_max: 3, snr_min_db: 15.0, snr_max_db: 25.0, duration_s: 2.0, sample_rate: SAMPLE_RATE }
    }

    pub fn duration_samples(&self) -> usize {
        (self.duration_s * self.sample_rate as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fg_min == 0 || self.n_fg_min > self.n_fg_max {
            return Err(TseError::ConfigInvalid(format!(
                "foreground range {}..={} is empty or starts at zero",
                self.n_fg_min, self.n_fg_max
            )));
        }
        if !(self.snr_min_db <= self.snr_max_db) || !self.snr_min_db.is_finite() || !self.snr_max_db.is_finite() {
            return Err(TseError::ConfigInvalid("invalid SNR range".into()));
        }
        if self.sample_rate == 0 || !(self.duration_s > 0.0) {
            return Err(TseError::ConfigInvalid("duration and sample rate must be positive".into()));
        }
        Ok(())
    }
}

/// One synthesized mixture with everything needed to build targets and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSample {
    pub mixture: AudioClip,
    /// Post-gain stems keyed by class index, exactly as summed into the mixture.
    pub stems: BTreeMap<usize, AudioClip>,
    pub background: AudioClip,
    pub activity: Vec<bool>,
    /// Drawn foreground-sum to background SNR.
    pub snr_db: f64,
    pub seed: u64,
}

impl MixtureSample {
    pub fn classes(&self) -> usize {
        self.activity.len()
    }

    pub fn active_indices(&self) -> Vec<usize> {
        self.stems.keys().copied().collect()
    }

    pub fn inactive_indices(&self) -> Vec<usize> {
        self.activity.iter().enumerate().filter_map(|(i, &a)| (!a).then_some(i)).collect()
    }

    /// Sum of the stems of `classes`; inactive classes contribute silence.
    pub fn target_for(&self, classes: &[usize]) -> AudioClip {
        let mut out = vec![0.0; self.mixture.len()];
        for c in classes {
            if let Some(stem) = self.stems.get(c) {
                for (o, v) in out.iter_mut().zip(stem.samples()) {
                    *o += v;
                }
            }
        }
        AudioClip::new(out, self.mixture.sample_rate()).expect("sum of finite stems is finite")
    }

    /// Realized foreground-to-background SNR measured on the emitted signals.
    pub fn realized_snr_db(&self) -> f64 {
        let fg = self.target_for(&self.active_indices());
        10.0 * (fg.energy() / self.background.energy()).log10()
    }

    /// `‖mixture − (Σ stems + background)‖∞`.
    pub fn additive_error(&self) -> f64 {
        let fg = self.target_for(&self.active_indices());
        self.mixture
            .samples()
            .iter()
            .zip(fg.samples())
            .zip(self.background.samples())
            .map(|((m, f), b)| (m - (f + b)).abs())
            .fold(0.0, f64::max)
    }
}

/// Amplitude gain `g` such that `10·log10(g²·signal_power / noise_power) = target_snr_db`.
pub fn gain_for_snr(signal_power: f64, noise_power: f64, target_snr_db: f64) -> Result<f64> {
    if !(signal_power > 0.0) || !(noise_power > 0.0) {
        return Err(TseError::ZeroPower { signal: signal_power, noise: noise_power });
    }
    Ok((10f64.powf(target_snr_db / 10.0) * noise_power / signal_power).sqrt())
}

/// Synthesizes one mixture from the toy library. `(preset, seed)` fully determines the output.
pub fn synthesize_mixture(vocab: &ClassVocabulary, preset: &MixturePreset, seed: u64) -> Result<MixtureSample> {
    preset.validate()?;
    if vocab.source() != VocabularySource::Toy {
        return Err(TseError::ConfigInvalid(
            "only the toy library can be synthesized; external datasets are imported from a manifest".into(),
        ));
    }
    let classes = vocab.len();
    if classes < preset.n_fg_max {
        return Err(TseError::VocabTooSmall { required: preset.n_fg_max, available: classes });
    }
    let len = preset.duration_samples();
    let rate = preset.sample_rate;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_fg = rng.random_range(preset.n_fg_min..=preset.n_fg_max);
    let mut chosen = sample_indices(&mut rng, classes, n_fg).into_vec();
    chosen.sort_unstable();
    let snr_db = if preset.snr_max_db > preset.snr_min_db {
        rng.random_range(preset.snr_min_db..preset.snr_max_db)
    } else {
        preset.snr_min_db
    };

    let raw: Vec<(usize, AudioClip)> = chosen
        .iter()
        .map(|&c| synthesize_toy_stem_at(c, len, rate, derive_seed(seed, &[c as u64])).map(|clip| (c, clip)))
        .collect::<Result<_>>()?;
    let background = synthesize_background(len, rate, derive_seed(seed, &[u64::MAX]));

    let mut fg_sum = vec![0.0; len];
    for (_, clip) in &raw {
        for (a, v) in fg_sum.iter_mut().zip(clip.samples()) {
            *a += v;
        }
    }
    let gain = gain_for_snr(crate::metrics::energy(&fg_sum), background.energy(), snr_db)?;
    let mix_peak = fg_sum
        .iter()
        .zip(background.samples())
        .map(|(f, b)| (gain * f + b).abs())
        .fold(0.0, f64::max);
    let norm = if mix_peak > PEAK_LIMIT { PEAK_LIMIT / mix_peak } else { 1.0 };

    let stems: BTreeMap<usize, AudioClip> =
        raw.into_iter().map(|(c, clip)| (c, clip.scaled(gain * norm).quantized())).collect();
    let background = background.scaled(norm).quantized();
    let mut mix = background.samples().to_vec();
    for stem in stems.values() {
        for (m, v) in mix.iter_mut().zip(stem.samples()) {
            *m += v;
        }
    }
    let mixture = AudioClip::new(mix, rate)?.quantized();
    let mut activity = vec![false; classes];
    for &c in stems.keys() {
        activity[c] = true;
    }
    Ok(MixtureSample { mixture, stems, background, activity, snr_db, seed })
}

fn synthesize_toy_stem_at(class: usize, len: usize, rate: u32, seed: u64) -> Result<AudioClip> {
    toy::toy_stem(class, len, rate, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gain_closed_forms() {
        assert_eq!(gain_for_snr(1.0, 1.0, 0.0).unwrap(), 1.0);
        assert!((gain_for_snr(1.0, 1.0, 20.0).unwrap() - 10.0).abs() < 1e-12);
        assert!(matches!(gain_for_snr(0.0, 1.0, 0.0), Err(TseError::ZeroPower { .. })));
        assert!(matches!(gain_for_snr(1.0, 0.0, 0.0), Err(TseError::ZeroPower { .. })));
    }

    #[test]
    fn vocabulary_invariants() {
        assert!(ClassVocabulary::new(vec!["a".into()], VocabularySource::External).is_err());
        assert!(ClassVocabulary::new(vec!["a".into(), "a".into()], VocabularySource::External).is_err());
        assert_eq!(ClassVocabulary::toy().len(), 8);
        assert_ne!(ClassVocabulary::toy().fingerprint(), ClassVocabulary::toy_subset(3).unwrap().fingerprint());
    }

    #[test]
    fn paper_preset_mixture_shape() {
        let s = synthesize_mixture(&ClassVocabulary::toy(), &MixturePreset::paper(), 11).unwrap();
        assert_eq!(s.mixture.len(), 96_000);
        let n = s.activity.iter().filter(|&&a| a).count();
        assert!((3..=5).contains(&n));
        assert!((15.0..=25.0).contains(&s.snr_db));
        assert!(s.additive_error() <= 1e-6);
        assert!(s.mixture.peak() <= PEAK_LIMIT + 1e-6);
    }

    #[test]
    fn mixture_is_deterministic_and_consistent() {
        let vocab = ClassVocabulary::toy();
        let a = synthesize_mixture(&vocab, &MixturePreset::toy(), 5).unwrap();
        let b = synthesize_mixture(&vocab, &MixturePreset::toy(), 5).unwrap();
        assert_eq!(a, b);
        for (i, &act) in a.activity.iter().enumerate() {
            assert_eq!(act, a.stems.contains_key(&i));
        }
        assert!((a.realized_snr_db() - a.snr_db).abs() < 0.01);
    }

    #[test]
    fn vocab_too_small() {
        let vocab = ClassVocabulary::toy_subset(3).unwrap();
        assert!(matches!(
            synthesize_mixture(&vocab, &MixturePreset::paper(), 1),
            Err(TseError::VocabTooSmall { required: 5, available: 3 })
        ));
    }
}
