use super::network::{GradingModel, ModelParams};
use super::{ModelConfig, ModelError, TrainConfig};
use crate::nn::{Parameters, Tensor};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;

/// Layer internals that are fixed in code but recorded for reproducibility.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub norm: String,
    pub feed_forward: String,
    pub branch_weights: String,
    pub encoder_sharing: String,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            norm: "post".into(),
            feed_forward: "relu, width 4d".into(),
            branch_weights: "independent".into(),
            encoder_sharing: "shared, frozen".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub question: String,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    /// Epoch whose weights were kept.
    pub epoch: usize,
    pub seed: u64,
    pub enrichment_version: String,
    pub train_mse: f64,
    pub val_mse: f64,
    pub train: TrainConfig,
    /// Training-split (question, reference) pairs, used to rebuild the
    /// one-shot example pool at serving time.
    pub question_pool: Vec<PoolEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSnapshot {
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

/// A trained model as a single JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model_version: String,
    pub config: ModelConfig,
    pub architecture: Architecture,
    pub params: Vec<NamedParam>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerSnapshot>,
    pub metadata: TrainingMetadata,
}

fn content_id(config: &ModelConfig, params: &[NamedParam]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    feed(serde_json::to_string(config).expect("config serializes").as_bytes());
    for p in params {
        feed(p.name.as_bytes());
        for x in &p.data {
            feed(&x.to_bits().to_le_bytes());
        }
    }
    format!("ckpt-{h:016x}")
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &GradingModel<T>, metadata: TrainingMetadata) -> Self {
        let params: Vec<NamedParam> = model
            .params
            .named_tensors()
            .into_iter()
            .map(|(name, t)| NamedParam { name, shape: t.shape().to_vec(), data: t.data().iter().map(|x| x.as_f64()).collect() })
            .collect();
        Checkpoint {
            format_version: FORMAT_VERSION,
            model_version: content_id(&model.config, &params),
            config: model.config.clone(),
            architecture: Architecture::default(),
            params,
            optimizer: None,
            metadata,
        }
    }

    /// Rebuilds the model with element type `T`.
    pub fn to_model<T: Scalar>(&self) -> Result<GradingModel<T>, ModelError> {
        let mut params = ModelParams::<T>::init(&self.config)?;
        let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        if names.len() != self.params.len() {
            return Err(ModelError::Parse(format!("expected {} tensors, found {}", names.len(), self.params.len())));
        }
        for ((slot, name), stored) in params.tensors_mut().into_iter().zip(&names).zip(&self.params) {
            if &stored.name != name || stored.shape != slot.shape() {
                return Err(ModelError::Parse(format!(
                    "tensor {:?} {:?} does not match expected {name:?} {:?}",
                    stored.name,
                    stored.shape,
                    slot.shape()
                )));
            }
            *slot = Tensor::from_vec(&stored.shape, stored.data.iter().map(|x| T::of(*x)).collect())?;
        }
        GradingModel::from_parts(self.config.clone(), params)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        let found = value.get("format_version").and_then(|v| v.as_u64());
        match found {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            Some(v) => {
                return Err(ModelError::Version(format!("checkpoint format {v}, this build reads format {FORMAT_VERSION}")));
            }
            None => return Err(ModelError::Parse("missing format_version".into())),
        }
        serde_json::from_value(value).map_err(|e| ModelError::Parse(e.to_string()))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_json()).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, ModelError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
    Checkpoint::from_json(&text)
}
