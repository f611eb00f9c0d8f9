use super::tokenizer::{TokenSequence, Tokenizer};
use crate::nn::Tensor;
use crate::scalar::Scalar;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncodeError {
    #[error("embedding provider failed: {0}")]
    Provider(String),
    #[error("encoder configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Hash,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub provider: ProviderKind,
    /// Hidden size.
    pub d: usize,
    /// Sequence length.
    #[serde(rename = "L")]
    pub max_len: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub remote_url: Option<String>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { provider: ProviderKind::Hash, d: 64, max_len: 128, seed: 42, remote_url: None }
    }
}

/// Supplies per-token vectors for a token sequence.
pub trait EmbeddingProvider<T: Scalar>: Send + Sync {
    fn dim(&self) -> usize;

    /// Returns an `L × dim` matrix. Rows at padded positions may hold anything;
    /// [`embed`] zeroes them.
    fn token_vectors(&self, tokens: &TokenSequence) -> Result<Tensor<T>, EncodeError>;
}

/// Token embeddings with the sequence mask attached.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix<T> {
    pub values: Tensor<T>,
    pub mask: Vec<u8>,
}

/// Runs the provider and zeroes masked-off rows.
pub fn embed<T: Scalar, P: EmbeddingProvider<T> + ?Sized>(
    tokens: &TokenSequence,
    provider: &P,
    expected_dim: usize,
) -> Result<EmbeddingMatrix<T>, EncodeError> {
    if provider.dim() != expected_dim {
        return Err(EncodeError::Config(format!("provider dimension {} but model expects {expected_dim}", provider.dim())));
    }
    let mut values = provider.token_vectors(tokens)?;
    if values.shape() != [tokens.len(), expected_dim] {
        return Err(EncodeError::Provider(format!("provider returned shape {:?}", values.shape())));
    }
    for (r, m) in tokens.mask.iter().enumerate() {
        if *m == 0 {
            values.row_mut(r).iter_mut().for_each(|x| *x = T::zero());
        }
    }
    if !values.is_finite() {
        return Err(EncodeError::Provider("non-finite embedding".into()));
    }
    Ok(EmbeddingMatrix { values, mask: tokens.mask.clone() })
}

/// Offline provider: each vocabulary bucket owns a fixed standard-normal
/// vector derived from `(seed, bucket)`, plus sinusoidal position encodings
/// and a constant offset for the second segment.
#[derive(Debug, Clone)]
pub struct HashEmbedding {
    dim: usize,
    seed: u64,
    segment_offset: Vec<f64>,
}

const SEGMENT_STREAM: u64 = u64::MAX;

impl HashEmbedding {
    pub fn new(dim: usize, seed: u64) -> Self {
        let segment_offset = Self::draw(seed, SEGMENT_STREAM, dim).into_iter().map(|x| 0.5 * x).collect();
        Self { dim, seed, segment_offset }
    }

    fn draw(seed: u64, stream: u64, dim: usize) -> Vec<f64> {
        let mixed = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = ChaCha8Rng::seed_from_u64(mixed);
        (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    /// The fixed vector of a vocabulary bucket.
    pub fn token_vector(&self, id: u32) -> Vec<f64> {
        Self::draw(self.seed, u64::from(id), self.dim)
    }
}

/// Standard sinusoidal position encoding.
pub fn positional_encoding(pos: usize, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|i| {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 * freq;
            if i % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

impl<T: Scalar> EmbeddingProvider<T> for HashEmbedding {
    fn dim(&self) -> usize {
        self.dim
    }

    fn token_vectors(&self, tokens: &TokenSequence) -> Result<Tensor<T>, EncodeError> {
        let l = tokens.len();
        let mut out = Tensor::zeros(&[l, self.dim]);
        for pos in 0..l {
            if tokens.mask[pos] == 0 {
                continue;
            }
            let tok = self.token_vector(tokens.ids[pos]);
            let pe = positional_encoding(pos, self.dim);
            let seg = f64::from(tokens.segment[pos]);
            for (c, o) in out.row_mut(pos).iter_mut().enumerate() {
                *o = T::of(tok[c] + pe[c] + seg * self.segment_offset[c]);
            }
        }
        Ok(out)
    }
}

/// Mean of the unmasked token vectors of `text`, scaled to unit L2 norm.
pub fn sentence_embedding<T: Scalar, P: EmbeddingProvider<T> + ?Sized>(
    text: &str,
    tokenizer: &Tokenizer,
    provider: &P,
) -> Result<Vec<T>, EncodeError> {
    let tokens = tokenizer.encode(text, None);
    let m = embed(&tokens, provider, provider.dim())?;
    let pooled = crate::nn::mean_pool(&m.values, &m.mask).map_err(|e| EncodeError::Provider(e.to_string()))?;
    let norm = pooled.data().iter().map(|x| *x * *x).sum::<T>().sqrt();
    if norm == T::zero() {
        return Err(EncodeError::Provider("zero sentence embedding".into()));
    }
    Ok(pooled.data().iter().map(|x| *x / norm).collect())
}
