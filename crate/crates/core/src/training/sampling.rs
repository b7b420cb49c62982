//! Per-step query and target construction from a mixture.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Result, TseError};
use crate::query::Query;
use crate::synthesis::MixtureSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryMode {
    /// Every queried class is active.
    Fmq,
    /// One inactive class with a silent target.
    Is,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub mixture: AudioClip,
    pub query: Query,
    pub target: AudioClip,
    pub is_inactive_sample: bool,
    /// Full activity of the mixture.
    pub labels: Vec<bool>,
}

/// Draws `k` uniformly on `[1, n_active]` (FMQ) and picks `k` active classes,
/// or one inactive class with a zero target (IS).
pub fn sample_training_query<R: Rng + ?Sized>(sample: &MixtureSample, mode: QueryMode, rng: &mut R) -> Result<TrainingSample> {
    match mode {
        QueryMode::Fmq => {
            let n_active = sample.active_indices().len();
            if n_active == 0 {
                return Err(TseError::NoActiveClass);
            }
            let k = rng.random_range(1..=n_active);
            fmq_sample_with_k(sample, k, rng)
        }
        QueryMode::Is => {
            let inactive = sample.inactive_indices();
            if inactive.is_empty() {
                return Err(TseError::NoInactiveAvailable);
            }
            let c = inactive[rng.random_range(0..inactive.len())];
            Ok(TrainingSample {
                mixture: sample.mixture.clone(),
                query: Query::from_indices(sample.classes(), &[c])?,
                target: AudioClip::zeros(sample.mixture.len(), sample.mixture.sample_rate()),
                is_inactive_sample: true,
                labels: sample.activity.clone(),
            })
        }
    }
}

/// FMQ sample with exactly `k` of the active classes.
pub fn fmq_sample_with_k<R: Rng + ?Sized>(sample: &MixtureSample, k: usize, rng: &mut R) -> Result<TrainingSample> {
    let active = sample.active_indices();
    if active.is_empty() {
        return Err(TseError::NoActiveClass);
    }
    if k == 0 || k > active.len() {
        return Err(TseError::InsufficientClasses { condition: format!("FMQ k={k}"), required: k, available: active.len() });
    }
    let mut chosen: Vec<usize> = sample_indices(rng, active.len(), k).into_iter().map(|i| active[i]).collect();
    chosen.sort_unstable();
    Ok(TrainingSample {
        mixture: sample.mixture.clone(),
        query: Query::from_indices(sample.classes(), &chosen)?,
        target: sample.target_for(&chosen),
        is_inactive_sample: false,
        labels: sample.activity.clone(),
    })
}
