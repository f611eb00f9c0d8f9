use crate::store::Outcome;
use grader_core::data::ExamItem;
use grader_core::model::{predict_batch, Checkpoint, Encoder, GradingModel, ModelError};
use grader_llm::enrich::Enricher;
use grader_llm::{Gateway, QuestionPool};
use std::sync::Arc;

/// Enriches and scores single items with one loaded checkpoint.
pub struct Grader {
    model: GradingModel<f64>,
    model_version: String,
    enrichment_version: String,
    encoder: Encoder<f64>,
    enricher: Enricher,
}

impl Grader {
    /// Uses the checkpoint's hash encoder and rebuilds the retrieval pool from
    /// its training questions.
    pub fn new(ckpt: &Checkpoint, gateway: Arc<Gateway>) -> Result<Self, ModelError> {
        let encoder = Encoder::from_config(&ckpt.config)?;
        Self::with_encoder(ckpt, gateway, encoder)
    }

    pub fn with_encoder(ckpt: &Checkpoint, gateway: Arc<Gateway>, encoder: Encoder<f64>) -> Result<Self, ModelError> {
        let model = ckpt.to_model::<f64>()?;
        let embed = |t: &str| grader_core::text::sentence_embedding(t, encoder.tokenizer(), encoder.provider());
        let pool = QuestionPool::from_entries(&ckpt.metadata.question_pool, embed).map_err(|e| ModelError::Config(e.to_string()))?;
        let enricher = Enricher::new(gateway, encoder.clone(), Arc::new(pool));
        if enricher.version() != ckpt.metadata.enrichment_version {
            return Err(ModelError::Version(format!(
                "service enrichment {:?} differs from checkpoint enrichment {:?}",
                enricher.version(),
                ckpt.metadata.enrichment_version
            )));
        }
        Ok(Self {
            model,
            model_version: ckpt.model_version.clone(),
            enrichment_version: ckpt.metadata.enrichment_version.clone(),
            encoder,
            enricher,
        })
    }

    pub fn model_version(&self) -> &str {
        &self.model_version
    }

    /// Never fails as a whole: problems become an error outcome for this item.
    pub async fn grade(&self, item: &ExamItem) -> Outcome {
        let enriched = match self.enricher.enrich_item(item).await {
            Ok(e) => e,
            Err(e) => {
                return Outcome::Error { id: item.id.clone(), branch: Some(e.branch.code().to_string()), message: e.source.to_string() };
            }
        };
        match predict_batch(&[enriched], &self.model, &self.model_version, &self.enrichment_version, &self.encoder) {
            Ok(mut r) => Outcome::Scored(r.remove(0)),
            Err(e) => Outcome::Error { id: item.id.clone(), branch: None, message: e.to_string() },
        }
    }
}
