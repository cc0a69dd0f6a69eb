//! Run configuration for the command-line workflows.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{ModelConfig, ModelError, TrainOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Carve train and dev from `paths.train` with the seeded 80/10/10
    /// session-id partition instead of reading `paths.dev`.
    pub dev_split: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let t = TrainOptions::default();
        TrainingConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            dev_split: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub train: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev: Option<PathBuf>,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    pub paths: PathsConfig,
    /// Overrides `model.seed`.
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.model.validate()?;
        let t = &self.training;
        if t.epochs == 0 || t.batch_size == 0 {
            return Err(ModelError::InvalidConfig("epochs and batch_size must be positive".into()));
        }
        if !(t.learning_rate.is_finite() && t.learning_rate > 0.0) {
            return Err(ModelError::InvalidConfig(format!(
                "learning_rate {} must be positive",
                t.learning_rate
            )));
        }
        if self.paths.train.as_os_str().is_empty() || self.paths.checkpoint.as_os_str().is_empty() {
            return Err(ModelError::InvalidConfig("paths.train and paths.checkpoint are required".into()));
        }
        if t.dev_split && self.paths.dev.is_some() {
            return Err(ModelError::InvalidConfig("dev_split and paths.dev are exclusive".into()));
        }
        Ok(())
    }

    /// The model config with the run seed applied.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            seed: self.seed,
            ..self.model.clone()
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            learning_rate: self.training.learning_rate,
        }
    }

    /// SHA-256 of the canonical JSON rendering.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
