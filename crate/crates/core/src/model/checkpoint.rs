//! Serialized model checkpoints.

use serde::{Deserialize, Serialize};

use super::tagger::CsrlModel;
use super::ModelError;
use crate::tags::label_vocabulary_hash;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub label_vocabulary_hash: String,
    pub seed: u64,
    pub model: CsrlModel,
}

impl Checkpoint {
    pub fn new(model: CsrlModel) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            label_vocabulary_hash: label_vocabulary_hash(),
            seed: model.config.seed,
            model,
        }
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        serde_json::to_string(self).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }

    /// Parses and checks the label vocabulary and parameter layout.
    pub fn from_json(json: &str) -> Result<Self, ModelError> {
        let ck: Checkpoint =
            serde_json::from_str(json).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if ck.format_version != FORMAT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported format version {}",
                ck.format_version
            )));
        }
        let expected = label_vocabulary_hash();
        if ck.label_vocabulary_hash != expected {
            return Err(ModelError::VocabularyMismatch {
                expected,
                found: ck.label_vocabulary_hash,
            });
        }
        ck.model.check_layout()?;
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Vocab};

    fn model() -> CsrlModel {
        let cfg = ModelConfig {
            encoder_layers: 0,
            ..ModelConfig::tiny()
        };
        CsrlModel::new(cfg, Vocab::build(["[A]", "[B]", "x"])).unwrap()
    }

    #[test]
    fn round_trip() {
        let ck = Checkpoint::new(model());
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back.model, ck.model);
    }

    #[test]
    fn refuses_other_label_vocabulary() {
        let mut ck = Checkpoint::new(model());
        ck.label_vocabulary_hash = "deadbeef".into();
        let err = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap_err();
        assert!(matches!(err, ModelError::VocabularyMismatch { .. }));
    }

    #[test]
    fn refuses_tampered_layout() {
        let ck = Checkpoint::new(model());
        let mut v: serde_json::Value = serde_json::from_str(&ck.to_json().unwrap()).unwrap();
        v["model"]["config"]["attn_dim"] = 32.into();
        let err = Checkpoint::from_json(&v.to_string()).unwrap_err();
        assert!(matches!(err, ModelError::Checkpoint(_)));
    }
}
