mod common;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::gaussian;
use tse_core::audio::AudioClip;
use tse_core::metrics::snr_improvement_samples;
use tse_core::model::{to_f64, to_model_input, ModelConfig};
use tse_core::synthesis::{ClassVocabulary, MixturePreset, MixtureSample, SampleSource, Split, SyntheticSource};
use tse_core::training::{
    fmq_sample_with_k, plan_epoch, read_log, sample_training_query, train, training_example, QueryMode, System,
    TrainArtifacts, TrainingConfig,
};
use tse_core::TseError;

/// χ² critical value for 3 degrees of freedom at p = 0.01.
const CHI2_3DF_P01: f64 = 11.345;

fn handmade(active: &[usize], classes: usize, len: usize) -> MixtureSample {
    let mut rng = ChaCha8Rng::seed_from_u64(active.len() as u64);
    let stems: BTreeMap<usize, AudioClip> =
        active.iter().map(|&c| (c, AudioClip::new(gaussian(&mut rng, len, 0.1), 16_000).unwrap())).collect();
    let background = AudioClip::new(gaussian(&mut rng, len, 0.01), 16_000).unwrap();
    let mut mix = background.clone();
    for s in stems.values() {
        mix = mix.add(s).unwrap();
    }
    let mut activity = vec![false; classes];
    active.iter().for_each(|&c| activity[c] = true);
    MixtureSample { mixture: mix, stems, background, activity, snr_db: 20.0, seed: 0 }
}

#[test]
fn forced_k_selects_every_active_class() {
    let m = handmade(&[2, 5, 7], 8, 400);
    let ts = fmq_sample_with_k(&m, 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(ts.query.indices(), vec![2, 5, 7]);
    assert_eq!(ts.target, m.target_for(&[2, 5, 7]));
    assert!(!ts.is_inactive_sample);
    assert_eq!(ts.labels, m.activity);
    assert!(matches!(fmq_sample_with_k(&m, 4, &mut ChaCha8Rng::seed_from_u64(0)), Err(TseError::InsufficientClasses { .. })));
}

#[test]
fn inactive_sample_mode_queries_an_absent_class_with_silence() {
    let m = handmade(&[2, 5, 7], 8, 400);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let ts = sample_training_query(&m, QueryMode::Is, &mut rng).unwrap();
        assert!(ts.is_inactive_sample);
        assert_eq!(ts.query.popcount(), 1);
        assert!(ts.query.indices().iter().all(|&c| !m.activity[c]));
        assert_eq!(ts.target.energy(), 0.0);
    }
    let full = handmade(&[0, 1, 2], 3, 100);
    assert!(matches!(sample_training_query(&full, QueryMode::Is, &mut rng), Err(TseError::NoInactiveAvailable)));
}

#[test]
fn query_size_is_uniform_over_active_count() {
    let m = handmade(&[0, 3, 4, 6], 8, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let draws = 10_000;
    let mut counts = [0usize; 4];
    for _ in 0..draws {
        let ts = sample_training_query(&m, QueryMode::Fmq, &mut rng).unwrap();
        assert!(ts.query.is_subset_of(&m.activity));
        assert_eq!(ts.target, m.target_for(&ts.query.indices()));
        counts[ts.query.popcount() - 1] += 1;
    }
    let expected = draws as f64 / 4.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    assert!(chi2 < CHI2_3DF_P01, "counts {counts:?}, chi2 {chi2:.2}");
}

#[test]
fn inactive_fraction_over_one_epoch() {
    let vocab = ClassVocabulary::toy();
    let source = SyntheticSource::split(vocab, MixturePreset::toy(), 5, Split::Train, 2000);
    let cfg = TrainingConfig::toy(System::Baseline2, 5);
    for epoch in 0..3 {
        let plan = plan_epoch(&cfg, source.len(), epoch);
        let n_is = plan.inactive.iter().filter(|&&b| b).count();
        assert_eq!(n_is, 200);
        let mut sorted = plan.order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..2000).collect::<Vec<_>>());
    }
    let plan = plan_epoch(&cfg, source.len(), 0);
    for i in (0..2000).step_by(37) {
        let ts = training_example(&source, &cfg, &plan, 0, i).unwrap();
        assert_eq!(ts.is_inactive_sample, plan.inactive[i]);
        if ts.is_inactive_sample {
            assert_eq!(ts.target.energy(), 0.0);
            assert!(ts.query.indices().iter().all(|&c| !ts.labels[c]));
        }
    }
    assert_eq!(plan_epoch(&TrainingConfig::toy(System::Proposed, 5), 2000, 0).inactive, vec![false; 2000]);
}

#[test]
fn config_contracts() {
    let mut cfg = TrainingConfig::toy(System::Proposed, 1);
    cfg.is_fraction = 0.1;
    assert!(matches!(cfg.validate(), Err(TseError::ConfigInvalid(_))));
    let mut cfg = TrainingConfig::toy(System::Baseline1, 1);
    cfg.lambda_cls = 1.0;
    assert!(matches!(cfg.validate(), Err(TseError::ConfigInvalid(_))));
    let mut cfg = TrainingConfig::toy(System::Baseline1, 1);
    cfg.warmup_epochs = cfg.epochs;
    assert!(cfg.validate().is_err());
    let paper = TrainingConfig::paper(System::Baseline2, 0);
    assert_eq!((paper.batch_size, paper.epochs, paper.warmup_epochs), (8, 100, 10));
    assert_eq!((paper.peak_lr, paper.is_fraction, paper.snr_max_db), (5e-4, 0.10, 30.0));

    let source = SyntheticSource::split(ClassVocabulary::toy(), MixturePreset::toy(), 1, Split::Train, 4);
    let wrong_head = ModelConfig::miniature(8, true);
    let cfg = TrainingConfig { epochs: 1, warmup_epochs: 0, ..TrainingConfig::toy(System::Baseline1, 1) };
    assert!(matches!(train(&source, None, &wrong_head, &cfg, None), Err(TseError::ConfigInvalid(_))));
    let wrong_vocab = ModelConfig::miniature(5, false);
    assert!(matches!(train(&source, None, &wrong_vocab, &cfg, None), Err(TseError::IncompatibleVocabulary(_))));
}

fn short_preset() -> MixturePreset {
    MixturePreset { duration_s: 0.25, ..MixturePreset::toy() }
}

#[test]
fn same_seed_gives_identical_loss_curves() {
    let vocab = ClassVocabulary::toy();
    let source = SyntheticSource::split(vocab.clone(), short_preset(), 3, Split::Train, 24);
    let val = SyntheticSource::split(vocab, short_preset(), 3, Split::Val, 6);
    let model = ModelConfig::miniature(8, true);
    let cfg = TrainingConfig { epochs: 3, warmup_epochs: 1, ..TrainingConfig::toy(System::Proposed, 17) };
    let a = train(&source, Some(&val), &model, &cfg, None).unwrap();
    let b = train(&source, Some(&val), &model, &cfg, None).unwrap();
    assert_eq!(a.step_losses.len(), 9);
    for (x, y) in a.step_losses.iter().zip(&b.step_losses) {
        assert!((x - y).abs() <= 1e-6);
    }
    assert_eq!(a.history, b.history);
    let other = TrainingConfig { master_seed: 18, ..cfg };
    let c = train(&source, Some(&val), &model, &other, None).unwrap();
    assert_ne!(a.step_losses, c.step_losses);
}

#[test]
fn runaway_learning_rate_reports_divergence() {
    let source = SyntheticSource::split(ClassVocabulary::toy(), short_preset(), 3, Split::Train, 16);
    let cfg = TrainingConfig {
        epochs: 4,
        warmup_epochs: 0,
        peak_lr: 1e30,
        grad_clip: None,
        ..TrainingConfig::toy(System::Baseline1, 2)
    };
    match train(&source, None, &ModelConfig::miniature(8, false), &cfg, None) {
        Err(TseError::Divergence { .. }) => {}
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("training at lr 1e30 should diverge"),
    }
}

#[test]
fn toy_two_epoch_smoke_run() {
    let vocab = ClassVocabulary::toy();
    let source = SyntheticSource::split(vocab.clone(), MixturePreset::toy(), 21, Split::Train, 48);
    let val = SyntheticSource::split(vocab, MixturePreset::toy(), 21, Split::Val, 8);
    let dir = tempfile::tempdir().unwrap();
    let artifacts = TrainArtifacts { dir: dir.path().join("run") };
    let cfg = TrainingConfig { epochs: 2, warmup_epochs: 1, ..TrainingConfig::toy(System::Proposed, 21) };
    let out = match train(&source, Some(&val), &ModelConfig::toy(8, true), &cfg, Some(&artifacts)) {
        Ok(o) => o,
        Err(TseError::Divergence { .. }) => return,
        Err(e) => panic!("{e}"),
    };
    assert_eq!(out.history.len(), 2);
    assert!(out.history[1].tse_loss <= out.history[0].tse_loss, "{:?}", out.history);
    assert!(out.history.iter().all(|h| h.val_snri.is_some_and(f64::is_finite)));
    assert_eq!(read_log(&artifacts.log()).unwrap(), out.history);
    assert!(artifacts.best_checkpoint().exists() && artifacts.last_checkpoint().exists());
}

/// Slow: about an hour on one CPU core.
#[test]
#[ignore]
fn toy_model_overfits_two_hundred_mixtures() {
    let vocab = ClassVocabulary::toy();
    let source = SyntheticSource::split(vocab, MixturePreset::toy(), 8, Split::Train, 200);
    let cfg = TrainingConfig { epochs: 60, warmup_epochs: 3, ..TrainingConfig::toy(System::Baseline1, 8) };
    let out = train(&source, None, &ModelConfig::toy(8, false), &cfg, None).unwrap();
    let mut total = 0.0;
    let mut n = 0;
    for i in 0..source.len() {
        let m = source.sample(i).unwrap();
        for c in m.active_indices() {
            let q = tse_core::Query::from_indices(8, &[c]).unwrap();
            let (est, _) = out.best.forward(&to_model_input::<f32>(m.mixture.samples()), &q).unwrap();
            total += snr_improvement_samples(m.target_for(&[c]).samples(), &to_f64(&est), m.mixture.samples()).unwrap();
            n += 1;
        }
    }
    let mean = total / n as f64;
    common::emit(&format!("overfit: training-set FMQ SNRi {mean:.2} dB after 60 epochs"));
    assert!(mean >= 10.0);
}
