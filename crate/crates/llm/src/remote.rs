//! Embedding provider backed by an HTTP endpoint.

use grader_core::nn::Tensor;
use grader_core::text::{EmbeddingProvider, EncodeError, TokenSequence};
use std::time::Duration;

/// Posts `{"ids": [...], "segment": [...]}` to `url` and expects
/// `{"vectors": [[...], ...]}` with one row per token.
///
/// Calls block; inside a multi-threaded tokio runtime they are wrapped in
/// `block_in_place`.
pub struct RemoteEmbedding {
    client: reqwest::blocking::Client,
    url: String,
    dim: usize,
}

impl RemoteEmbedding {
    pub fn new(url: impl Into<String>, dim: usize, timeout: Duration) -> Result<Self, EncodeError> {
        let client = reqwest::blocking::Client::builder().timeout(timeout).build().map_err(|e| EncodeError::Config(e.to_string()))?;
        Ok(Self { client, url: url.into(), dim })
    }

    fn fetch(&self, tokens: &TokenSequence) -> Result<Vec<Vec<f64>>, EncodeError> {
        let body = serde_json::json!({ "ids": tokens.ids, "segment": tokens.segment });
        let resp = self.client.post(&self.url).json(&body).send().map_err(|e| EncodeError::Provider(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(EncodeError::Provider(format!("HTTP {}", resp.status())));
        }
        let v: serde_json::Value = resp.json().map_err(|e| EncodeError::Provider(e.to_string()))?;
        serde_json::from_value(v["vectors"].clone()).map_err(|e| EncodeError::Provider(format!("bad vectors: {e}")))
    }
}

impl EmbeddingProvider<f64> for RemoteEmbedding {
    fn dim(&self) -> usize {
        self.dim
    }

    fn token_vectors(&self, tokens: &TokenSequence) -> Result<Tensor<f64>, EncodeError> {
        let rows = match tokio::runtime::Handle::try_current() {
            Ok(_) => tokio::task::block_in_place(|| self.fetch(tokens))?,
            Err(_) => self.fetch(tokens)?,
        };
        if rows.len() != tokens.len() || rows.iter().any(|r| r.len() != self.dim) {
            return Err(EncodeError::Provider(format!("expected {}×{} vectors", tokens.len(), self.dim)));
        }
        Tensor::from_vec(&[tokens.len(), self.dim], rows.concat()).map_err(|e| EncodeError::Provider(e.to_string()))
    }
}
