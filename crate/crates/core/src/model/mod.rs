//! The multi-branch scoring model: four branch transformer layers over a
//! shared frozen encoder, a fusion transformer over the row-wise concatenation
//! of branch features, mean pooling and a sigmoid regression head.

mod checkpoint;
mod config;
mod network;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Architecture, Checkpoint, NamedParam, OptimizerSnapshot, PoolEntry, TrainingMetadata, FORMAT_VERSION};
pub use config::{ablate, ablation_variants, Component, ModelConfig, TrainConfig};
pub use network::{branch_sequences, Encoder, ForwardTrace, GradingModel, ItemFeatures, ModelParams};
pub use train::{encode_items, train, train_with, BatchRecord, EpochLog, TrainOutcome};

use crate::data::{EnrichedItem, GradedResult};
use crate::nn::NnError;
use crate::scalar::Scalar;
use crate::text::EncodeError;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {message}")]
    Numeric { epoch: usize, batch: usize, message: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("version mismatch: {0}")]
    Version(String),
    #[error("checkpoint parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

/// Scores every item with a loaded model, preserving input order.
///
/// All items must carry the enrichment version the model was trained on.
pub fn predict_batch<T: Scalar>(
    items: &[EnrichedItem],
    model: &GradingModel<T>,
    model_version: &str,
    enrichment_version: &str,
    encoder: &Encoder<T>,
) -> Result<Vec<GradedResult>, ModelError> {
    if let Some(bad) = items.iter().find(|e| e.enrichment_version != enrichment_version) {
        return Err(ModelError::Version(format!(
            "item {:?} enriched with {:?}, model expects {enrichment_version:?}",
            bad.item.id, bad.enrichment_version
        )));
    }
    items
        .par_iter()
        .map(|e| {
            let features = encoder.features(e, &model.config)?;
            let score = model.forward(&features)?;
            Ok(GradedResult {
                id: e.item.id.clone(),
                predicted_score: score.as_f64(),
                model_version: model_version.to_string(),
                branch_mask: model.config.branches,
            })
        })
        .collect()
}

/// [`predict_batch`] driven directly by a checkpoint.
pub fn predict_with_checkpoint(items: &[EnrichedItem], ckpt: &Checkpoint, encoder: &Encoder<f64>) -> Result<Vec<GradedResult>, ModelError> {
    let model = ckpt.to_model::<f64>()?;
    predict_batch(items, &model, &ckpt.model_version, &ckpt.metadata.enrichment_version, encoder)
}
