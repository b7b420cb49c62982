//! Experiment configuration files (TOML, versioned by `schema_version`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TseError};
use crate::evaluation::QueryCondition;
use crate::model::{ModelConfig, ScalePreset};
use crate::refinement::DEFAULT_THETA_GRID;
use crate::synthesis::{ClassVocabulary, DatasetCounts, MixturePreset};
use crate::training::{AdamConfig, System, TrainingConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetPreset {
    /// Synthesized from the built-in toy library.
    Toy,
    /// Read from an existing manifest.
    Manifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub preset: DatasetPreset,
    /// Required for `manifest`; for `toy`, where `synth` writes and others read.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(default = "default_train")]
    pub train: usize,
    #[serde(default = "default_val")]
    pub val: usize,
    #[serde(default = "default_test")]
    pub test: usize,
    /// Number of toy classes (first `classes` of the library).
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixing: Option<MixturePreset>,
}

fn default_train() -> usize {
    2000
}
fn default_val() -> usize {
    100
}
fn default_test() -> usize {
    200
}
fn default_classes() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub scale: ScalePreset,
}

/// Every field is optional; unset fields take the system's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_cls: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_max_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adam: Option<AdamConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    #[serde(default = "default_theta_grid")]
    pub theta_grid: Vec<f64>,
    #[serde(default = "default_conditions")]
    pub conditions: Vec<String>,
    #[serde(default = "default_sweep")]
    pub n_inactive: Vec<usize>,
    /// Seed of the evaluation query draws; defaults to the master seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_theta_grid() -> Vec<f64> {
    DEFAULT_THETA_GRID.to_vec()
}
fn default_conditions() -> Vec<String> {
    QueryCondition::table_conditions().iter().map(|c| format!("{}:{}", c.n_active, c.n_inactive)).collect()
}
fn default_sweep() -> Vec<usize> {
    (0..=5).collect()
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self { theta_grid: default_theta_grid(), conditions: default_conditions(), n_inactive: default_sweep(), seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub system: System,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
}

impl ExperimentConfig {
    /// Toy-scale defaults for `system`.
    pub fn toy(system: System, master_seed: u64, output_dir: PathBuf) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            system,
            master_seed,
            output_dir,
            dataset: DatasetSection {
                preset: DatasetPreset::Toy,
                manifest: None,
                train: default_train(),
                val: default_val(),
                test: default_test(),
                classes: default_classes(),
                mixing: None,
            },
            model: ModelSection { scale: ScalePreset::Toy },
            training: TrainingSection::default(),
            evaluation: EvaluationSection::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: toml::Value =
            toml::from_str(text).map_err(|e| TseError::ConfigInvalid(format!("config is not valid TOML: {e}")))?;
        match raw.get("schema_version").and_then(toml::Value::as_integer) {
            Some(v) if v == SCHEMA_VERSION as i64 => {}
            Some(v) => {
                return Err(TseError::ConfigInvalid(format!(
                    "schema_version {v} is not supported (expected {SCHEMA_VERSION})"
                )))
            }
            None => return Err(TseError::ConfigInvalid("missing schema_version".into())),
        }
        let cfg: Self = toml::from_str(text).map_err(|e| TseError::ConfigInvalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(TseError::MissingArtifact(path.to_path_buf()));
        }
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| TseError::ConfigInvalid(format!("cannot serialize config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.training_config()?;
        self.model_config()?.validate()?;
        self.mixture_preset().validate()?;
        self.conditions()?;
        if self.evaluation.theta_grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(TseError::ConfigInvalid("theta_grid values must lie in [0, 1]".into()));
        }
        if self.dataset.preset == DatasetPreset::Manifest && self.dataset.manifest.is_none() {
            return Err(TseError::ConfigInvalid("dataset.preset = \"manifest\" needs dataset.manifest".into()));
        }
        Ok(())
    }

    pub fn vocabulary(&self) -> Result<ClassVocabulary> {
        ClassVocabulary::toy_subset(self.dataset.classes)
    }

    pub fn mixture_preset(&self) -> MixturePreset {
        self.dataset.mixing.unwrap_or_else(MixturePreset::toy)
    }

    pub fn counts(&self) -> DatasetCounts {
        DatasetCounts { train: self.dataset.train, val: self.dataset.val, test: self.dataset.test }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dataset.manifest.clone().unwrap_or_else(|| self.output_dir.join("dataset").join("manifest.jsonl"))
    }

    pub fn system_dir(&self) -> PathBuf {
        self.output_dir.join(self.system.name())
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let cfg = ModelConfig::for_scale(self.model.scale, self.dataset.classes, self.system.has_classifier());
        cfg.validate()?;
        Ok(cfg)
    }

    /// Resolves the training section against the system defaults. The second
    /// baseline always trains with 10% inactive-sample queries; the others never do.
    pub fn training_config(&self) -> Result<TrainingConfig> {
        let base = match self.model.scale {
            ScalePreset::Paper => TrainingConfig::paper(self.system, self.master_seed),
            _ => TrainingConfig::toy(self.system, self.master_seed),
        };
        let forced_is = base.is_fraction;
        if let Some(f) = self.training.is_fraction {
            if f != forced_is {
                return Err(TseError::ConfigInvalid(format!(
                    "system {} trains with is_fraction = {forced_is}; remove the override {f}",
                    self.system.name()
                )));
            }
        }
        let t = &self.training;
        let cfg = TrainingConfig {
            batch_size: t.batch_size.unwrap_or(base.batch_size),
            epochs: t.epochs.unwrap_or(base.epochs),
            peak_lr: t.peak_lr.unwrap_or(base.peak_lr),
            warmup_epochs: t.warmup_epochs.unwrap_or(base.warmup_epochs),
            lambda_cls: t.lambda_cls.unwrap_or(base.lambda_cls),
            snr_max_db: t.snr_max_db.unwrap_or(base.snr_max_db),
            grad_clip: t.grad_clip.or(base.grad_clip),
            adam: t.adam.unwrap_or(base.adam),
            ..base
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn conditions(&self) -> Result<Vec<QueryCondition>> {
        self.evaluation.conditions.iter().map(|s| s.parse()).collect()
    }

    pub fn eval_seed(&self) -> u64 {
        self.evaluation.seed.unwrap_or(self.master_seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_toml() {
        let cfg = ExperimentConfig::toy(System::Proposed, 3, "runs/x".into());
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn system_rules_are_enforced() {
        let b2 = ExperimentConfig::toy(System::Baseline2, 1, "o".into());
        let t = b2.training_config().unwrap();
        assert_eq!(t.is_fraction, 0.10);
        assert!(!b2.model_config().unwrap().classifier);
        let mut bad = ExperimentConfig::toy(System::Proposed, 1, "o".into());
        bad.training.is_fraction = Some(0.1);
        assert!(matches!(bad.training_config(), Err(TseError::ConfigInvalid(_))));
        let p = ExperimentConfig::toy(System::Proposed, 1, "o".into());
        assert!(p.model_config().unwrap().classifier);
        assert_eq!(p.training_config().unwrap().is_fraction, 0.0);
        assert!(!ExperimentConfig::toy(System::Baseline1, 1, "o".into()).model_config().unwrap().classifier);
    }

    #[test]
    fn schema_version_is_checked() {
        let text = ExperimentConfig::toy(System::Baseline1, 1, "o".into()).to_toml().unwrap();
        let wrong = text.replace("schema_version = 1", "schema_version = 9");
        assert!(matches!(ExperimentConfig::from_toml(&wrong), Err(TseError::ConfigInvalid(_))));
        let missing = text.replace("schema_version = 1\n", "");
        assert!(matches!(ExperimentConfig::from_toml(&missing), Err(TseError::ConfigInvalid(_))));
    }
}
