use crate::CliError;
use grader_core::data::BranchMask;
use grader_core::model::{ModelConfig, TrainConfig};
use grader_core::text::EncoderConfig;
use grader_llm::GatewayConfig;
use grader_service::ServiceConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// The `model` section: everything in [`ModelConfig`] except the encoder,
/// which has its own top-level section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub heads: usize,
    pub fusion_layers: usize,
    pub branches: BranchMask,
    pub cross_fusion: bool,
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self { heads: m.heads, fusion_layers: m.fusion_layers, branches: m.branches, cross_fusion: m.cross_fusion, seed: m.seed }
    }
}

/// One experiment manifest. Every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub llm: GatewayConfig,
    pub encoder: EncoderConfig,
    pub model: ModelSection,
    /// `train.seed` also seeds the 10:1:1 split.
    pub train: TrainConfig,
    pub service: ServiceConfig,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder.clone(),
            heads: self.model.heads,
            fusion_layers: self.model.fusion_layers,
            branches: self.model.branches,
            cross_fusion: self.model.cross_fusion,
            seed: self.model.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_are_optional() {
        let c: Config = serde_json::from_str(r#"{"train": {"epochs": 3}, "encoder": {"d": 32, "L": 64}}"#).unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.learning_rate, TrainConfig::default().learning_rate);
        assert_eq!((c.model_config().d(), c.model_config().max_len()), (32, 64));
        assert_eq!(c.llm, GatewayConfig::default());
    }

    #[test]
    fn shipped_config_parses() {
        let c: Config = serde_json::from_str(include_str!("../../../configs/synthetic.json")).unwrap();
        assert_eq!(c.train.learning_rate, 2e-4);
        c.model_config().validate().unwrap();
    }

    #[test]
    fn unknown_sections_are_rejected() {
        assert!(serde_json::from_str::<Config>(r#"{"trian": {}}"#).is_err());
    }
}
