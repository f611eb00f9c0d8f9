use super::checkpoint::{Checkpoint, PoolEntry, TrainingMetadata};
use super::network::{backward_with, forward_with, Encoder, ForwardTrace, GradingModel, ItemFeatures, ModelParams};
use super::{ModelConfig, ModelError, TrainConfig};
use crate::data::EnrichedItem;
use crate::nn::{adamw_step, mse_loss, AdamW, AdamWState, NnError, Parameters};
use crate::scalar::Scalar;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Forward passes recorded for one mini-batch, with their labels.
#[derive(Debug, Default)]
pub struct BatchRecord<T> {
    entries: Vec<(ForwardTrace<T>, T)>,
}

impl<T: Scalar> BatchRecord<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn push(&mut self, trace: ForwardTrace<T>, label: T) {
        self.entries.push((trace, label));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn loss(&self) -> Result<T, ModelError> {
        let (preds, labels) = self.columns();
        Ok(mse_loss(&preds, &labels)?)
    }

    fn columns(&self) -> (Vec<T>, Vec<T>) {
        self.entries.iter().map(|(t, y)| (t.score(), *y)).unzip()
    }
}

impl<T: Scalar> GradingModel<T> {
    /// Records a forward pass for every `(features, label)` pair.
    pub fn record(&self, batch: &[(&ItemFeatures<T>, T)]) -> Result<BatchRecord<T>, ModelError> {
        let traces: Vec<ForwardTrace<T>> = batch
            .par_iter()
            .map(|(f, _)| forward_with(&self.params, f))
            .collect::<Result<_, _>>()?;
        Ok(BatchRecord { entries: traces.into_iter().zip(batch.iter().map(|(_, y)| *y)).collect() })
    }

    /// Exact gradients of the batch MSE with respect to every parameter.
    /// Per-item gradients are computed in parallel and summed in batch order.
    pub fn backward_batch(&self, record: &BatchRecord<T>) -> Result<(T, ModelParams<T>), ModelError> {
        if record.is_empty() {
            return Err(ModelError::Nn(NnError::State("backward called without a recorded forward pass".into())));
        }
        let loss = record.loss()?;
        let (preds, labels) = record.columns();
        let dscores = crate::nn::mse_grad(&preds, &labels)?;
        let zero = self.params.zeros_like();
        let per_item: Vec<ModelParams<T>> = record
            .entries
            .par_iter()
            .zip(dscores.par_iter())
            .map(|((trace, _), &ds)| {
                let mut g = zero.clone();
                backward_with(&self.params, trace, ds, &mut g).map(|_| g)
            })
            .collect::<Result<_, _>>()?;
        let mut total = zero;
        for g in &per_item {
            total.accumulate(g)?;
        }
        Ok((loss, total))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Labelled features for a set of enriched items.
pub fn encode_items<T: Scalar>(
    items: &[EnrichedItem],
    encoder: &Encoder<T>,
    config: &ModelConfig,
) -> Result<Vec<ItemFeatures<T>>, ModelError> {
    items.par_iter().map(|e| encoder.features(e, config)).collect()
}

fn labels_of<T: Scalar>(items: &[EnrichedItem]) -> Result<Vec<T>, ModelError> {
    items
        .iter()
        .map(|e| e.item.score().map(T::of).ok_or_else(|| ModelError::Config(format!("item {:?} has no label", e.item.id))))
        .collect()
}

pub(crate) fn common_version(items: &[&EnrichedItem]) -> Result<String, ModelError> {
    let first = items.first().ok_or_else(|| ModelError::Config("empty dataset".into()))?;
    let v = &first.enrichment_version;
    if let Some(other) = items.iter().find(|e| &e.enrichment_version != v) {
        return Err(ModelError::Config(format!(
            "mixed enrichment versions {v:?} and {:?}",
            other.enrichment_version
        )));
    }
    Ok(v.clone())
}

/// MSE of `params` over `features`, evaluated in chunks of `chunk`.
fn dataset_mse<T: Scalar>(params: &ModelParams<T>, features: &[ItemFeatures<T>], labels: &[T], chunk: usize) -> Result<f64, ModelError> {
    let mut preds = Vec::with_capacity(features.len());
    for part in features.chunks(chunk) {
        let scores: Vec<T> = part
            .par_iter()
            .map(|f| forward_with(params, f).map(|t| t.score()))
            .collect::<Result<_, _>>()?;
        preds.extend(scores);
    }
    Ok(mse_loss(&preds, labels)?.as_f64())
}

/// Mini-batch AdamW on MSE, keeping the epoch with the lowest validation MSE.
///
/// `on_epoch` is called after every epoch.
pub fn train_with<T: Scalar>(
    train_items: &[EnrichedItem],
    val_items: &[EnrichedItem],
    tcfg: &TrainConfig,
    mcfg: &ModelConfig,
    encoder: &Encoder<T>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, ModelError> {
    tcfg.validate()?;
    mcfg.validate()?;
    if train_items.is_empty() || val_items.is_empty() {
        return Err(ModelError::Config("training and validation sets must be non-empty".into()));
    }
    let all: Vec<&EnrichedItem> = train_items.iter().chain(val_items).collect();
    let version = common_version(&all)?;

    let train_x = encode_items(train_items, encoder, mcfg)?;
    let train_y: Vec<T> = labels_of(train_items)?;
    let val_x = encode_items(val_items, encoder, mcfg)?;
    let val_y: Vec<T> = labels_of(val_items)?;

    let mut model = GradingModel::<T>::init(mcfg.clone())?;
    let opt = AdamW { weight_decay: tcfg.weight_decay, ..AdamW::new(tcfg.learning_rate) };
    let mut state = AdamWState::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut order: Vec<usize> = (0..train_x.len()).collect();

    let mut best: Option<(f64, f64, usize, ModelParams<T>)> = None;
    let mut log = Vec::with_capacity(tcfg.epochs);
    for epoch in 1..=tcfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut sq_sum = 0.0;
        for (b, idx) in order.chunks(tcfg.train_batch).enumerate() {
            let batch: Vec<(&ItemFeatures<T>, T)> = idx.iter().map(|&i| (&train_x[i], train_y[i])).collect();
            let record = model.record(&batch)?;
            let (loss, grads) = model.backward_batch(&record)?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(ModelError::Numeric { epoch, batch: b + 1, message: format!("loss {loss}") });
            }
            sq_sum += loss.as_f64() * idx.len() as f64;
            adamw_step(&opt, &mut model.params, &grads, &mut state)?;
        }
        let train_mse = sq_sum / train_x.len() as f64;
        let val_mse = dataset_mse(&model.params, &val_x, &val_y, tcfg.eval_batch)?;
        if !val_mse.is_finite() {
            return Err(ModelError::Numeric { epoch, batch: 0, message: "validation loss".into() });
        }
        let entry = EpochLog { epoch, train_mse, val_mse, seconds: started.elapsed().as_secs_f64() };
        log::info!("epoch {epoch}: train_mse {train_mse:.6} val_mse {val_mse:.6}");
        on_epoch(&entry);
        log.push(entry);
        if best.as_ref().is_none_or(|(v, ..)| val_mse < *v) {
            best = Some((val_mse, train_mse, epoch, model.params.clone()));
        }
    }

    let (val_mse, train_mse, epoch, params) = best.expect("at least one epoch");
    let best_model = GradingModel { config: mcfg.clone(), params };
    let metadata = TrainingMetadata {
        epoch,
        seed: tcfg.seed,
        enrichment_version: version,
        train_mse,
        val_mse,
        train: tcfg.clone(),
        question_pool: train_items
            .iter()
            .map(|e| PoolEntry { question: e.item.question.clone(), reference: e.item.reference.text.clone() })
            .collect(),
    };
    Ok(TrainOutcome { checkpoint: Checkpoint::from_model(&best_model, metadata), log })
}

/// [`train_with`] without an epoch callback.
pub fn train<T: Scalar>(
    train_items: &[EnrichedItem],
    val_items: &[EnrichedItem],
    tcfg: &TrainConfig,
    mcfg: &ModelConfig,
    encoder: &Encoder<T>,
) -> Result<TrainOutcome, ModelError> {
    train_with(train_items, val_items, tcfg, mcfg, encoder, |_| {})
}
