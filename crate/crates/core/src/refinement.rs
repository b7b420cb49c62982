//! Inference-time query refinement: query classes the classifier deems absent
//! (clip probability below θ) are dropped before conditioning the mask.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TseError};
use crate::float::Float;
use crate::model::{Analysis, TseModel};
use crate::query::Query;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefinementMode {
    /// Threshold the model's own clip probabilities.
    Model,
    /// Intersect with the ground-truth activity labels.
    Oracle,
    /// Use the query as given.
    Off,
}

impl RefinementMode {
    pub fn name(self) -> &'static str {
        match self {
            RefinementMode::Model => "model",
            RefinementMode::Oracle => "oracle",
            RefinementMode::Off => "off",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [RefinementMode::Model, RefinementMode::Oracle, RefinementMode::Off].into_iter().find(|m| m.name() == s)
    }
}

pub const DEFAULT_THETA_GRID: [f64; 5] = [0.0, 0.05, 0.10, 0.15, 0.20];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementConfig {
    pub theta: f64,
    pub mode: RefinementMode,
}

impl RefinementConfig {
    pub fn new(theta: f64, mode: RefinementMode) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(TseError::ConfigInvalid(format!("theta {theta} is not a probability")));
        }
        Ok(Self { theta, mode })
    }

    pub fn off() -> Self {
        Self { theta: 0.0, mode: RefinementMode::Off }
    }

    pub fn model(theta: f64) -> Result<Self> {
        Self::new(theta, RefinementMode::Model)
    }

    pub fn oracle() -> Self {
        Self { theta: 1.0, mode: RefinementMode::Oracle }
    }
}

/// Keeps bit `i` iff `q_i = 1` and `p̂_i ≥ θ`.
pub fn refine_query(query: &Query, probs: &[f64], theta: f64) -> Result<Query> {
    if probs.len() != query.classes() {
        return Err(TseError::LengthMismatch { expected: query.classes(), actual: probs.len() });
    }
    let mut out = Query::new(query.bits().iter().zip(probs).map(|(&q, &p)| q && p >= theta).collect());
    out.condition = query.condition;
    Ok(out)
}

/// `q AND activity`.
pub fn oracle_refine(query: &Query, activity: &[bool]) -> Result<Query> {
    if activity.len() != query.classes() {
        return Err(TseError::LengthMismatch { expected: query.classes(), actual: activity.len() });
    }
    let mut out = Query::new(query.bits().iter().zip(activity).map(|(&q, &a)| q && a).collect());
    out.condition = query.condition;
    Ok(out)
}

/// Applies `cfg` to `query` given the classifier output (if any) and the true activity (if known).
pub fn apply_refinement(
    query: &Query,
    cfg: &RefinementConfig,
    probs: Option<&[f64]>,
    activity: Option<&[bool]>,
) -> Result<Query> {
    match cfg.mode {
        RefinementMode::Off => Ok(query.clone()),
        RefinementMode::Model => {
            let p = probs.ok_or_else(|| {
                TseError::NoClassifier(
                    "model-mode refinement needs one; use a proposed-system checkpoint or --mode off/oracle"
                        .into(),
                )
            })?;
            refine_query(query, p, cfg.theta)
        }
        RefinementMode::Oracle => {
            let a = activity.ok_or_else(|| TseError::ConfigInvalid("oracle refinement needs activity labels".into()))?;
            oracle_refine(query, a)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinedExtraction<T> {
    pub estimate: Vec<T>,
    pub refined_query: Query,
    /// Clip probabilities when the model has a classifier.
    pub probs: Option<Vec<f64>>,
}

/// One pass: the trunk features are computed once and feed both the
/// classifier and the mask estimator.
pub fn extract_with_refinement<T: Float>(
    model: &TseModel<T>,
    x: &[T],
    query: &Query,
    cfg: &RefinementConfig,
    activity: Option<&[bool]>,
) -> Result<RefinedExtraction<T>> {
    if cfg.mode == RefinementMode::Model && !model.has_classifier() {
        return Err(TseError::NoClassifier(
            "model-mode refinement is unavailable for this checkpoint; use --mode off or oracle"
                .into(),
        ));
    }
    let analysis = model.analyze(x)?;
    extract_from_analysis(model, &analysis, query, cfg, activity)
}

/// Same as [`extract_with_refinement`] but reuses an existing analysis.
pub fn extract_from_analysis<T: Float>(
    model: &TseModel<T>,
    analysis: &Analysis<T>,
    query: &Query,
    cfg: &RefinementConfig,
    activity: Option<&[bool]>,
) -> Result<RefinedExtraction<T>> {
    let probs = analysis.prediction.as_ref().map(|p| p.clip_probs_f64());
    let refined_query = apply_refinement(query, cfg, probs.as_deref(), activity)?;
    let estimate = model.extract(analysis, &refined_query)?;
    Ok(RefinedExtraction { estimate, refined_query, probs })
}

/// One line of the optional refinement trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub sample_id: String,
    pub original: Vec<bool>,
    pub probs: Option<Vec<f64>>,
    pub theta: f64,
    pub mode: RefinementMode,
    pub refined: Vec<bool>,
}

pub fn write_trace<W: Write>(out: &mut W, record: &TraceRecord) -> Result<()> {
    serde_json::to_writer(&mut *out, record)?;
    out.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(bits: &[u8]) -> Query {
        Query::new(bits.iter().map(|&b| b == 1).collect())
    }

    #[test]
    fn threshold_example() {
        let r = refine_query(&q(&[1, 0, 1]), &[0.9, 0.2, 0.01], 0.05).unwrap();
        assert_eq!(r, q(&[1, 0, 0]));
        assert!(matches!(refine_query(&q(&[1, 0]), &[0.5], 0.1), Err(TseError::LengthMismatch { .. })));
    }

    #[test]
    fn keeps_bits_on_equality() {
        assert_eq!(refine_query(&q(&[1, 1]), &[0.1, 0.0999], 0.1).unwrap(), q(&[1, 0]));
    }

    #[test]
    fn oracle_cases() {
        let activity = [true, false, false, false, true];
        assert_eq!(oracle_refine(&q(&[1, 1, 1, 1, 0]), &activity).unwrap(), q(&[1, 0, 0, 0, 0]));
        assert!(oracle_refine(&q(&[0, 1, 1, 0, 0]), &activity).unwrap().is_empty());
        assert_eq!(oracle_refine(&q(&[1, 0, 0, 0, 1]), &activity).unwrap(), q(&[1, 0, 0, 0, 1]));
    }

    #[test]
    fn model_mode_without_probabilities_is_an_error() {
        let cfg = RefinementConfig::model(0.1).unwrap();
        assert!(matches!(apply_refinement(&q(&[1, 0]), &cfg, None, None), Err(TseError::NoClassifier(_))));
        assert!(RefinementConfig::model(1.5).is_err());
    }

    proptest! {
        #[test]
        fn zero_threshold_is_identity(bits in prop::collection::vec(any::<bool>(), 1..12), seed in any::<u64>()) {
            let probs: Vec<f64> = (0..bits.len()).map(|i| ((seed >> (i % 60)) & 0xff) as f64 / 255.0).collect();
            let query = Query::new(bits);
            prop_assert_eq!(refine_query(&query, &probs, 0.0).unwrap(), query);
        }

        #[test]
        fn labels_as_probabilities_give_intersection(
            pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..12),
            theta in 1e-9f64..=1.0,
        ) {
            let query = Query::new(pairs.iter().map(|p| p.0).collect());
            let activity: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            let probs: Vec<f64> = activity.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
            prop_assert_eq!(refine_query(&query, &probs, theta).unwrap(), oracle_refine(&query, &activity).unwrap());
        }

        #[test]
        fn false_negative_removes_active_class(p in 0.0f64..0.5, theta in 0.5f64..1.0) {
            let r = refine_query(&q(&[1, 1]), &[p, 0.9], theta).unwrap();
            prop_assert!(!r.bits()[0]);
        }
    }
}
