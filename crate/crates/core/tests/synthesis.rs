use std::collections::BTreeSet;

use rustfft::{num_complex::Complex, FftPlanner};
use tempfile::tempdir;
use tse_core::synthesis::{
    build_dataset, gain_for_snr, synthesize_mixture, synthesize_toy_stem, ClassVocabulary, DatasetCounts, DatasetManifest,
    ManifestSource, MixturePreset, SampleSource, Split, SyntheticSource,
};

fn spectral_centroid(x: &[f64], rate: f64) -> f64 {
    let n = x.len();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let (mut num, mut den) = (0.0, 0.0);
    for (k, c) in buf.iter().take(n / 2 + 1).enumerate() {
        let p = c.norm_sqr();
        num += p * k as f64 * rate / n as f64;
        den += p;
    }
    num / den
}

#[test]
fn class_templates_are_spectrally_separated() {
    let len = 32_000;
    let mean = |class: usize| (0..100).map(|s| spectral_centroid(synthesize_toy_stem(class, len, s).unwrap().samples(), 16_000.0)).sum::<f64>() / 100.0;
    let c0 = mean(0);
    let c1 = mean(1);
    assert!((c0 - c1).abs() > 200.0, "centroids {c0:.1} Hz vs {c1:.1} Hz");
}

#[test]
fn stems_are_deterministic_with_one_active_region() {
    for class in 0..8 {
        assert_eq!(synthesize_toy_stem(class, 16_000, 7).unwrap(), synthesize_toy_stem(class, 16_000, 7).unwrap());
    }
    for seed in 0..1000u64 {
        let class = (seed % 8) as usize;
        let stem = synthesize_toy_stem(class, 32_000, seed).unwrap();
        let s = stem.samples();
        let first = s.iter().position(|&v| v != 0.0).expect("non-silent stem");
        let last = s.iter().rposition(|&v| v != 0.0).unwrap();
        assert!(s[..first].iter().chain(&s[last + 1..]).all(|&v| v == 0.0));
        let active = last + 1 - first;
        assert!(active >= 7_000 && active <= 32_000, "class {class} seed {seed}: {active} samples");
    }
}

#[test]
fn gain_matches_bisection_root() {
    let (sig, noise, target) = (2.0, 5.0, 15.0);
    let g = gain_for_snr(sig, noise, target).unwrap();
    let realized = |g: f64| 10.0 * (g * g * sig / noise).log10();
    let (mut lo, mut hi) = (0.0f64, 100.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if realized(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    assert!((g - 0.5 * (lo + hi)).abs() < 1e-9);
}

#[test]
fn toy_mixtures_are_consistent() {
    let vocab = ClassVocabulary::toy();
    let preset = MixturePreset::toy();
    for seed in 0..500u64 {
        let m = synthesize_mixture(&vocab, &preset, seed).unwrap();
        assert!(m.additive_error() <= 1e-6);
        assert!((m.realized_snr_db() - m.snr_db).abs() <= 0.01, "seed {seed}");
        let n = m.active_indices().len();
        assert!((2..=3).contains(&n));
        assert_eq!(m.activity.iter().filter(|&&a| a).count(), n);
        assert!(m.mixture.peak() <= 0.99 + 1e-6);
        assert_eq!(m.mixture.len(), 32_000);
    }
}

#[test]
fn dataset_build_is_reproducible_and_round_trips() {
    let vocab = ClassVocabulary::toy();
    let preset = MixturePreset::toy();
    let counts = DatasetCounts { train: 200, val: 20, test: 50 };
    let a = tempdir().unwrap();
    let b = tempdir().unwrap();
    let manifest = build_dataset(&vocab, &preset, counts, 11, a.path()).unwrap();
    build_dataset(&vocab, &preset, counts, 11, b.path()).unwrap();
    assert_eq!(manifest.entries.len(), 270);

    let bytes = |d: &tempfile::TempDir| std::fs::read(d.path().join("manifest.jsonl")).unwrap();
    assert_eq!(bytes(&a), bytes(&b));
    let wav = "test/test-000007.mix.wav";
    assert_eq!(std::fs::read(a.path().join(wav)).unwrap(), std::fs::read(b.path().join(wav)).unwrap());

    let mut seen = BTreeSet::new();
    for split in Split::ALL {
        let seeds: BTreeSet<u64> = manifest.entries_for(split).map(|e| e.seed).collect();
        assert_eq!(seeds.len(), counts.get(split));
        assert!(seen.is_disjoint(&seeds));
        seen.extend(seeds);
    }

    let reread = DatasetManifest::read(&a.path().join("manifest.jsonl")).unwrap();
    assert_eq!(reread, manifest);

    let path = a.path().join("manifest.jsonl");
    for split in Split::ALL {
        let disk = ManifestSource::open(&path, split).unwrap();
        let synth = SyntheticSource::split(vocab.clone(), preset, 11, split, counts.get(split));
        assert_eq!(disk.len(), counts.get(split));
        for i in 0..disk.len() {
            let m = disk.sample(i).unwrap();
            assert!(m.additive_error() <= 1e-6);
            assert_eq!(m, synth.sample(i).unwrap());
        }
    }
}
