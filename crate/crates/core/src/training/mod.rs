//! Multi-task training: thresholded-SNR extraction loss plus weighted
//! classification loss, Adam, warm-up/cosine schedule, and the inactive-sample
//! mode used by the second baseline.

mod adam;
mod loss;
mod sampling;
mod schedule;

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{clip_grad_norm, Adam, AdamConfig};
pub use loss::{
    cls_loss, cls_loss_with_grad, extraction_loss_with_grad, snr_threshold, total_loss, tse_loss, tse_loss_with_grad,
    zero_target_loss, zero_target_loss_with_grad, BCE_CLAMP,
};
pub use sampling::{fmq_sample_with_k, sample_training_query, QueryMode, TrainingSample};
pub use schedule::lr_at;

use crate::error::{Result, TseError};
use crate::float::Float;
use crate::metrics::snr_improvement_samples;
use crate::model::{save_checkpoint, to_f64, to_model_input, CheckpointMeta, ModelConfig, ModelParams, Params, TseModel};
use crate::query::{derive_seed, Query};
use crate::synthesis::{ClassVocabulary, SampleSource};

const TAG_MODEL_INIT: u64 = 0x4d4f_4445;
const TAG_EPOCH: u64 = 0x4550_4f43;
const TAG_SAMPLE: u64 = 0x5341_4d50;
const TAG_VALIDATION: u64 = 0x5641_4c49;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum System {
    /// Extraction loss only, FMQ training.
    Baseline1,
    /// Extraction loss only, FMQ plus a fraction of inactive-sample queries.
    Baseline2,
    /// Extraction plus classification loss; classifier drives query refinement.
    Proposed,
}

impl System {
    pub const ALL: [System; 3] = [System::Baseline1, System::Baseline2, System::Proposed];

    pub fn name(self) -> &'static str {
        match self {
            System::Baseline1 => "baseline1",
            System::Baseline2 => "baseline2",
            System::Proposed => "proposed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|sys| sys.name() == s)
    }

    pub fn has_classifier(self) -> bool {
        self == System::Proposed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub system: System,
    pub batch_size: usize,
    pub epochs: usize,
    pub peak_lr: f64,
    pub warmup_epochs: usize,
    /// λ
    pub lambda_cls: f64,
    pub snr_max_db: f64,
    pub is_fraction: f64,
    pub master_seed: u64,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Global gradient-norm ceiling; `None` disables clipping.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub verbose: bool,
}

impl TrainingConfig {
    /// Full-scale recipe for `system`.
    pub fn paper(system: System, master_seed: u64) -> Self {
        Self {
            system,
            batch_size: 8,
            epochs: 100,
            peak_lr: 5e-4,
            warmup_epochs: 10,
            lambda_cls: if system.has_classifier() { 1.0 } else { 0.0 },
            snr_max_db: 30.0,
            is_fraction: if system == System::Baseline2 { 0.10 } else { 0.0 },
            master_seed,
            adam: AdamConfig::default(),
            grad_clip: Some(5.0),
            verbose: false,
        }
    }

    /// Desk-scale recipe: same loss and optimizer, shorter schedule.
    pub fn toy(system: System, master_seed: u64) -> Self {
        Self { epochs: 40, warmup_epochs: 2, ..Self::paper(system, master_seed) }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TseError::ConfigInvalid(m.to_string()));
        if !(0.0..=1.0).contains(&self.is_fraction) {
            return bad("is_fraction must lie in [0, 1]");
        }
        if self.epochs == 0 || self.warmup_epochs >= self.epochs {
            return bad("warmup_epochs must be smaller than a positive epoch count");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.peak_lr > 0.0) || !(self.snr_max_db > 0.0) || !(self.lambda_cls >= 0.0) {
            return bad("peak_lr and snr_max_db must be positive, lambda_cls non-negative");
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return bad("grad_clip must be positive");
        }
        if self.system.has_classifier() && self.is_fraction > 0.0 {
            return bad("the proposed system trains on FMQ queries only");
        }
        if !self.system.has_classifier() && self.lambda_cls != 0.0 {
            return bad("baselines have no classifier; lambda_cls must be 0");
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }

    pub fn model_seed(&self) -> u64 {
        derive_seed(self.master_seed, &[TAG_MODEL_INIT])
    }
}

/// Loss terms for one training example.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub tse: f64,
    pub cls: f64,
    pub total: f64,
}

fn loss_terms<T: Float>(
    estimate: &[T],
    clip: Option<Vec<f64>>,
    ts: &TrainingSample,
    snr_max_db: f64,
    lambda: f64,
) -> Result<(LossParts, Vec<f64>, Option<Vec<f64>>)> {
    let est = to_f64(estimate);
    let (tse, d_est) = extraction_loss_with_grad(ts.target.samples(), &est, ts.mixture.samples(), snr_max_db)?;
    let (cls, d_clip) = match clip {
        Some(p) if lambda > 0.0 => {
            let (l, g) = cls_loss_with_grad(&p, &ts.labels)?;
            (l, Some(g.into_iter().map(|v| v * lambda).collect()))
        }
        _ => (0.0, None),
    };
    Ok((LossParts { tse, cls, total: total_loss(tse, cls, lambda) }, d_est, d_clip))
}

/// Loss of one example in inference mode.
pub fn sample_loss<T: Float>(model: &TseModel<T>, ts: &TrainingSample, snr_max_db: f64, lambda: f64) -> Result<LossParts> {
    let (est, pred) = model.forward(&to_model_input::<T>(ts.mixture.samples()), &ts.query)?;
    loss_terms(&est, pred.map(|p| p.clip_probs_f64()), ts, snr_max_db, lambda).map(|(l, _, _)| l)
}

/// Loss of one example and its gradient, accumulated into `grad`.
pub fn sample_loss_and_grad<T: Float>(
    model: &TseModel<T>,
    ts: &TrainingSample,
    snr_max_db: f64,
    lambda: f64,
    grad: &mut ModelParams<T>,
) -> Result<LossParts> {
    let (est, pred, cache) = model.forward_train(&to_model_input::<T>(ts.mixture.samples()), &ts.query)?;
    let (parts, d_est, d_clip) = loss_terms(&est, pred.map(|p| p.clip_probs_f64()), ts, snr_max_db, lambda)?;
    let d_est: Vec<T> = d_est.into_iter().map(T::lit).collect();
    let d_clip: Option<Vec<T>> = d_clip.map(|g| g.into_iter().map(T::lit).collect());
    model.backward(cache, &d_est, d_clip.as_deref(), grad);
    Ok(parts)
}

/// Visiting order and inactive-sample assignment for one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochPlan {
    pub order: Vec<usize>,
    pub inactive: Vec<bool>,
}

/// Exactly `round(is_fraction · n)` samples are assigned to inactive-sample mode.
pub fn plan_epoch(cfg: &TrainingConfig, n: usize, epoch: usize) -> EpochPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, &[TAG_EPOCH, epoch as u64]));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_is = ((cfg.is_fraction * n as f64).round() as usize).min(n);
    let mut inactive = vec![false; n];
    for i in sample_indices(&mut rng, n, n_is) {
        inactive[i] = true;
    }
    EpochPlan { order, inactive }
}

/// The training example drawn for dataset item `index` in `epoch`.
pub fn training_example(
    source: &dyn SampleSource,
    cfg: &TrainingConfig,
    plan: &EpochPlan,
    epoch: usize,
    index: usize,
) -> Result<TrainingSample> {
    let sample = source.sample(index)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        cfg.master_seed,
        &[TAG_SAMPLE, epoch as u64, source.sample_key(index)],
    ));
    let mode = if plan.inactive[index] { QueryMode::Is } else { QueryMode::Fmq };
    sample_training_query(&sample, mode, &mut rng)
}

/// Mean SNRi over `source` with one active class queried per mixture, the
/// class chosen deterministically from `seed` and the sample key.
pub fn validation_snri(model: &TseModel<f32>, source: &dyn SampleSource, seed: u64) -> Result<f64> {
    let run = |i: usize| -> Result<f64> {
        let sample = source.sample(i)?;
        let active = sample.active_indices();
        if active.is_empty() {
            return Err(TseError::NoActiveClass);
        }
        let pick = derive_seed(seed, &[TAG_VALIDATION, source.sample_key(i)]) as usize % active.len();
        let query = Query::from_indices(sample.classes(), &[active[pick]])?;
        let (est, _) = model.forward(&to_model_input::<f32>(sample.mixture.samples()), &query)?;
        let target = sample.target_for(&[active[pick]]);
        snr_improvement_samples(target.samples(), &to_f64(&est), sample.mixture.samples())
    };
    let values: Vec<f64> = (0..source.len()).into_par_iter().map(run).collect::<Result<_>>()?;
    Ok(values.iter().sum::<f64>() / values.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub tse_loss: f64,
    pub cls_loss: f64,
    pub val_snri: Option<f64>,
    pub is_samples: usize,
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation SNRi (the last epoch
    /// when no validation data is given).
    pub best: TseModel<f32>,
    pub best_epoch: usize,
    pub history: Vec<EpochLog>,
    /// Mean total loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
}

/// Where training artifacts go.
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub dir: PathBuf,
}

impl TrainArtifacts {
    pub fn best_checkpoint(&self) -> PathBuf {
        self.dir.join("best.ckpt")
    }
    pub fn last_checkpoint(&self) -> PathBuf {
        self.dir.join("last.ckpt")
    }
    pub fn log(&self) -> PathBuf {
        self.dir.join("train_log.jsonl")
    }
}

fn worker_pool() -> Option<rayon::ThreadPool> {
    let n = std::env::var("TSE_NUM_WORKERS").ok()?.parse::<usize>().ok()?;
    rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build().ok()
}

/// Trains a model from scratch. Reproducible given `cfg.master_seed`, for any
/// worker count: per-example gradients are reduced in a fixed order.
pub fn train(
    train_set: &dyn SampleSource,
    val_set: Option<&dyn SampleSource>,
    model_cfg: &ModelConfig,
    cfg: &TrainingConfig,
    artifacts: Option<&TrainArtifacts>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if model_cfg.classifier != cfg.system.has_classifier() {
        return Err(TseError::ConfigInvalid(format!(
            "system {} {} a classifier head",
            cfg.system.name(),
            if cfg.system.has_classifier() { "requires" } else { "must not have" }
        )));
    }
    let vocab: &ClassVocabulary = train_set.vocabulary();
    if vocab.len() != model_cfg.classes {
        return Err(TseError::IncompatibleVocabulary(format!(
            "dataset has {} classes, model expects {}",
            vocab.len(),
            model_cfg.classes
        )));
    }
    if train_set.is_empty() {
        return Err(TseError::ConfigInvalid("training set is empty".into()));
    }
    let pool = worker_pool();

    let mut model = TseModel::<f32>::new(model_cfg.clone(), cfg.model_seed())?;
    let mut adam = Adam::new(&model.params, cfg.adam);
    let n = train_set.len();
    let spe = cfg.steps_per_epoch(n);
    let mut meta = CheckpointMeta::new(model_cfg.clone(), vocab, cfg.system.name(), cfg.master_seed);
    if let Some(a) = artifacts {
        fs::create_dir_all(&a.dir)?;
        fs::write(a.log(), "")?;
    }

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step_losses = Vec::with_capacity(cfg.epochs * spe);
    let mut best: Option<(f64, usize, ModelParams<f32>)> = None;
    let mut step = 0usize;
    let mut lr = 0.0;

    for epoch in 0..cfg.epochs {
        let plan = plan_epoch(cfg, n, epoch);
        let (mut tse_sum, mut cls_sum) = (0.0, 0.0);
        for batch in plan.order.chunks(cfg.batch_size) {
            lr = lr_at(step + 1, spe, cfg.peak_lr, cfg.warmup_epochs, cfg.epochs);
            let compute = || -> Vec<Result<(LossParts, ModelParams<f32>)>> {
                batch
                    .par_iter()
                    .map(|&i| {
                        let ts = training_example(train_set, cfg, &plan, epoch, i)?;
                        let mut g = model.params.zeros_like();
                        let parts = sample_loss_and_grad(&model, &ts, cfg.snr_max_db, cfg.lambda_cls, &mut g)?;
                        Ok((parts, g))
                    })
                    .collect()
            };
            let results = match &pool {
                Some(p) => p.install(compute),
                None => compute(),
            };
            let mut grad: Option<ModelParams<f32>> = None;
            let mut batch_loss = 0.0;
            for r in results {
                let (parts, g) = r?;
                if !parts.total.is_finite() {
                    return Err(TseError::Divergence {
                        epoch,
                        step,
                        detail: format!("non-finite loss (tse {}, cls {})", parts.tse, parts.cls),
                    });
                }
                tse_sum += parts.tse;
                cls_sum += parts.cls;
                batch_loss += parts.total;
                match &mut grad {
                    Some(acc) => acc.add_assign_from(&g),
                    None => grad = Some(g),
                }
            }
            let mut grad = grad.expect("non-empty batch");
            grad.scale(1.0 / batch.len() as f32);
            let norm = match cfg.grad_clip {
                Some(c) => clip_grad_norm(&mut grad, c),
                None => grad.sq_norm().sqrt(),
            };
            if !norm.is_finite() {
                return Err(TseError::Divergence { epoch, step, detail: "non-finite gradient norm".into() });
            }
            adam.step(&mut model.params, &grad, lr);
            step += 1;
            step_losses.push(batch_loss / batch.len() as f64);
        }

        let val_snri = match val_set {
            Some(v) if !v.is_empty() => Some(validation_snri(&model, v, cfg.master_seed)?),
            _ => None,
        };
        let entry = EpochLog {
            epoch: epoch + 1,
            step,
            lr,
            tse_loss: tse_sum / n as f64,
            cls_loss: cls_sum / n as f64,
            val_snri,
            is_samples: plan.inactive.iter().filter(|&&b| b).count(),
        };
        if cfg.verbose {
            eprintln!(
                "[{}] epoch {:>3}/{} step {:>6} lr {:.2e} tse {:>8.3} cls {:.4} val_snri {}",
                cfg.system.name(),
                entry.epoch,
                cfg.epochs,
                step,
                lr,
                entry.tse_loss,
                entry.cls_loss,
                val_snri.map_or("-".to_string(), |v| format!("{v:.2} dB"))
            );
        }
        let score = val_snri.unwrap_or(f64::NEG_INFINITY);
        let improved = match &best {
            None => true,
            Some((b, _, _)) => val_snri.is_none() || score > *b,
        };
        meta.step = step as u64;
        meta.epoch = epoch + 1;
        meta.val_snri = val_snri;
        if improved {
            best = Some((score, epoch + 1, model.params.clone()));
        }
        if let Some(a) = artifacts {
            let mut f = OpenOptions::new().append(true).open(a.log())?;
            serde_json::to_writer(&mut f, &entry)?;
            f.write_all(b"\n")?;
            save_checkpoint(&a.last_checkpoint(), &model, &meta)?;
            if improved {
                save_checkpoint(&a.best_checkpoint(), &model, &meta)?;
            }
        }
        history.push(entry);
    }

    let (_, best_epoch, params) = best.expect("at least one epoch");
    Ok(TrainOutcome { best: TseModel::from_params(model_cfg.clone(), params)?, best_epoch, history, step_losses })
}

/// Reads a training log written by [`train`].
pub fn read_log(path: &Path) -> Result<Vec<EpochLog>> {
    let text = fs::read_to_string(path)?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}
