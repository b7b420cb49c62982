mod common;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::gaussian;
use tse_core::model::{
    count_params_macs, frame_count, FeatureMap, ModelConfig, Params, SharedFeatures, Tcn, TcnShape, TseModel,
};
use tse_core::{Query, TseError};

fn mini(cls: bool) -> TseModel<f32> {
    TseModel::new(ModelConfig::miniature(4, cls), 3).unwrap()
}

fn signal(seed: u64, len: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gaussian(&mut rng, len, 0.3).into_iter().map(|v| v as f32).collect()
}

#[test]
fn frame_count_examples() {
    assert_eq!(frame_count(96000, 80, 40).unwrap(), 2399);
    assert_eq!(frame_count(80, 80, 40).unwrap(), 1);
    assert!(matches!(frame_count(79, 80, 40), Err(TseError::TooShort { .. })));
    let cfg = ModelConfig::paper(20, true);
    assert_eq!((cfg.window(), cfg.hop()), (80, 40));
}

#[test]
fn shape_chain_and_lengths() {
    let model = mini(true);
    for len in [80, 81, 119, 120, 400, 1001] {
        let x = signal(len as u64, len);
        let feats = model.encode(&x).unwrap();
        let l = frame_count(len, 80, 40).unwrap();
        assert_eq!(feats.values.dim(), (8, l));
        let z = model.extract_shared(&feats).unwrap();
        assert_eq!(z.values.dim(), (8, l));
        let e = model.embed_query(&Query::from_indices(4, &[1]).unwrap()).unwrap();
        let mask = model.estimate_mask(&z, &e).unwrap();
        assert_eq!(mask.values.dim(), (8, l));
        assert!(mask.values.iter().all(|&m| m >= 0.0));
        assert_eq!(model.decode(&feats, len).len(), len);
        let (est, pred) = model.forward(&x, &Query::from_indices(4, &[0, 2]).unwrap()).unwrap();
        assert_eq!(est.len(), len);
        assert_eq!(pred.unwrap().frame_probs.dim(), (4, l));
    }
}

#[test]
fn zero_inputs_give_zero_outputs() {
    let model = mini(false);
    let feats = model.encode(&vec![0.0; 400]).unwrap();
    assert!(feats.values.iter().all(|&v| v == 0.0));
    assert!(model.decode(&FeatureMap { values: Array2::zeros((8, 9)) }, 400).iter().all(|&v| v == 0.0));
    let z = model.extract_shared(&model.encode(&signal(1, 400)).unwrap()).unwrap();
    let mask = model.estimate_mask(&z, &model.embed_query(&Query::zeros(4)).unwrap()).unwrap();
    assert!(mask.values.iter().all(|&m| m == 0.0));
    let (est, _) = model.forward(&signal(2, 400), &Query::zeros(4)).unwrap();
    assert!(est.iter().all(|&v| v == 0.0));
}

#[test]
fn embedding_is_linear_without_bias() {
    let model = mini(false);
    let e = |idx: &[usize]| model.embed_query(&Query::from_indices(4, idx).unwrap()).unwrap();
    assert!(e(&[]).iter().all(|&v| v == 0.0));
    let sum = &e(&[0]) + &e(&[3]);
    let both = e(&[0, 3]);
    for (a, b) in sum.iter().zip(both.iter()) {
        assert!((a - b).abs() <= 1e-6);
    }
    let col = model.params.embedding.column(2);
    let norm = |v: &[f32]| v.iter().map(|x| x * x).sum::<f32>().sqrt();
    assert!((norm(e(&[2]).as_slice().unwrap()) - norm(&col.to_vec())).abs() < 1e-6);
}

#[test]
fn mask_rejects_mismatched_embedding() {
    let model = mini(false);
    let z = SharedFeatures { values: Array2::<f32>::zeros((8, 5)) };
    let e = ndarray::Array1::<f32>::zeros(7);
    assert!(matches!(model.estimate_mask(&z, &e), Err(TseError::DimensionMismatch(_))));
    assert!(matches!(model.embed_query(&Query::zeros(5)), Err(TseError::DimensionMismatch(_))));
}

#[test]
fn mask_is_non_negative_on_random_probes() {
    let model = mini(false);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut probes = 0;
    while probes < 10_000 {
        let x = signal(rng.random(), 800);
        let z = model.extract_shared(&model.encode(&x).unwrap()).unwrap();
        let bits: Vec<bool> = (0..4).map(|_| rng.random_bool(0.5)).collect();
        let m = model.estimate_mask(&z, &model.embed_query(&Query::new(bits)).unwrap()).unwrap();
        assert!(m.values.iter().all(|&v| v >= 0.0));
        probes += m.values.len();
    }
}

#[test]
fn classifier_output_ignores_the_query() {
    let model = mini(true);
    let x = signal(4, 640);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (_, reference) = model.forward(&x, &Query::zeros(4)).unwrap();
    let reference = reference.unwrap();
    for _ in 0..10 {
        let bits: Vec<bool> = (0..4).map(|_| rng.random_bool(0.5)).collect();
        let (_, pred) = model.forward(&x, &Query::new(bits)).unwrap();
        assert_eq!(pred.unwrap(), reference);
    }
    let z = model.extract_shared(&model.encode(&x).unwrap()).unwrap();
    let p = model.classify(&z).unwrap();
    for (i, row) in p.frame_probs.rows().into_iter().enumerate() {
        let lo = row.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        assert!(p.clip_probs[i] >= lo - 1e-6 && p.clip_probs[i] <= hi + 1e-6);
    }
    assert!(matches!(mini(false).classify(&z), Err(TseError::NoClassifier(_))));
}

#[test]
fn inference_is_deterministic() {
    let model = mini(true);
    let x = signal(9, 500);
    let q = Query::from_indices(4, &[1, 2]).unwrap();
    assert_eq!(model.forward(&x, &q).unwrap(), model.forward(&x, &q).unwrap());
    let feats = model.encode(&x).unwrap();
    assert_eq!(model.extract_shared(&feats).unwrap(), model.extract_shared(&feats).unwrap());
}

#[test]
fn random_autoencoding_stays_finite() {
    let model = mini(false);
    for s in 0..100 {
        let x = signal(100 + s, 480);
        let feats = model.encode(&x).unwrap();
        let y = model.decode(&feats, x.len());
        assert!(y.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn shared_stack_receptive_field_is_511_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let shape = TcnShape { io_channels: 4, hidden: 6, skip: 4, kernel: 3, blocks: 8, stacks: 1, affine_offsets: false };
    let tcn = Tcn::<f64>::new(&mut rng, shape);
    assert_eq!(tcn.receptive_field(), 511);

    // Normalisation is global over time, so the temporal reach is set by the
    // depthwise convolutions alone; every other operator acts per frame.
    let len = 1200;
    let at = 600;
    let mut x = Array2::<f64>::zeros((6, len));
    x.column_mut(at).fill(1.0);
    for block in &tcn.blocks {
        let mut conv = block.dconv.clone();
        conv.weight.mapv_inplace(|w| w.abs() + 1e-3);
        x = conv.forward(x.view());
    }
    let support = (0..len).filter(|&t| x.column(t).iter().any(|&v| v != 0.0)).count();
    assert_eq!(support, 511);

    let paper = ModelConfig::paper(4, false);
    assert_eq!((paper.shared_blocks, paper.shared_stacks, paper.kernel), (8, 1, 3));
}

#[test]
fn complexity_matches_instantiated_parameters() {
    for cls in [false, true] {
        let cfg = ModelConfig::miniature(4, cls);
        let model = TseModel::<f32>::new(cfg.clone(), 0).unwrap();
        assert_eq!(count_params_macs(&cfg).params, model.params.num_params());
    }
}
