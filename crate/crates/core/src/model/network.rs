use super::{ModelConfig, ModelError};
use crate::data::{Branch, EnrichedItem};
use crate::nn::{mean_pool, mean_pool_backward, LayerTrace, MlpParams, MlpTrace, NnError, Parameters, Tensor, TransformerLayerParams};
use crate::scalar::Scalar;
use crate::text::{embed, EmbeddingMatrix, EmbeddingProvider, HashEmbedding, ProviderKind, TokenSequence, Tokenizer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// The four branch inputs of one item, in fusion order (KPM, PQM, LGE, TSM).
pub fn branch_sequences(enriched: &EnrichedItem, tokenizer: &Tokenizer) -> [TokenSequence; 4] {
    let item = &enriched.item;
    [
        tokenizer.encode(&enriched.key_points_student.joined(), Some(&enriched.key_points_reference.joined())),
        tokenizer.encode(&enriched.pseudo_question, Some(&item.question)),
        tokenizer.encode(&enriched.general_evaluation.rendered(), None),
        tokenizer.encode(&enriched.clean_student, Some(&enriched.clean_reference)),
    ]
}

/// Tokenizer plus the shared, frozen embedding provider.
#[derive(Clone)]
pub struct Encoder<T> {
    tokenizer: Tokenizer,
    provider: Arc<dyn EmbeddingProvider<T>>,
}

impl<T: Scalar> Encoder<T> {
    pub fn new(max_len: usize, provider: Arc<dyn EmbeddingProvider<T>>) -> Self {
        Self { tokenizer: Tokenizer::new(max_len), provider }
    }

    /// Builds the offline hash provider. Remote providers are injected with [`Encoder::new`].
    pub fn from_config(config: &ModelConfig) -> Result<Self, ModelError> {
        match config.encoder.provider {
            ProviderKind::Hash => Ok(Self::new(config.max_len(), Arc::new(HashEmbedding::new(config.d(), config.encoder.seed)))),
            ProviderKind::Remote => Err(ModelError::Config("remote encoder must be constructed by the caller".into())),
        }
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn provider(&self) -> &dyn EmbeddingProvider<T> {
        self.provider.as_ref()
    }

    /// Embeds the active branch sequences of one item.
    pub fn features(&self, enriched: &EnrichedItem, config: &ModelConfig) -> Result<ItemFeatures<T>, ModelError> {
        if self.tokenizer.max_len() != config.max_len() {
            return Err(ModelError::Config(format!("encoder length {} vs model length {}", self.tokenizer.max_len(), config.max_len())));
        }
        let seqs = branch_sequences(enriched, &self.tokenizer);
        let mut branches = Vec::with_capacity(4);
        for b in config.branches.active() {
            branches.push((b, embed(&seqs[b.index()], self.provider.as_ref(), config.d())?));
        }
        Ok(ItemFeatures { branches })
    }
}

/// Frozen encoder output for one item: one `L × d` matrix per active branch.
#[derive(Debug, Clone)]
pub struct ItemFeatures<T> {
    pub branches: Vec<(Branch, EmbeddingMatrix<T>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    /// One layer per active branch, fusion order.
    pub branches: Vec<(Branch, TransformerLayerParams<T>)>,
    pub fusion: Vec<TransformerLayerParams<T>>,
    pub head: MlpParams<T>,
}

impl<T: Scalar> ModelParams<T> {
    /// Glorot-initialised weights drawn in a fixed order from `config.seed`.
    pub fn init(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d();
        let branches = config
            .branches
            .active()
            .map(|b| TransformerLayerParams::init(&mut rng, d, config.heads).map(|p| (b, p)))
            .collect::<Result<_, _>>()?;
        let fusion = (0..config.effective_fusion_layers())
            .map(|_| TransformerLayerParams::init(&mut rng, d, config.heads))
            .collect::<Result<_, _>>()?;
        let head = MlpParams::init(&mut rng, d);
        Ok(Self { branches, fusion, head })
    }

    /// Checks that the parameter layout matches `config`.
    pub fn matches(&self, config: &ModelConfig) -> bool {
        let d = config.d();
        self.branches.iter().map(|(b, _)| *b).eq(config.branches.active())
            && self.fusion.len() == config.effective_fusion_layers()
            && self.branches.iter().map(|(_, p)| p).chain(&self.fusion).all(|p| p.dim() == d && p.heads == config.heads)
            && self.head.hidden.input_dim() == d
    }
}

impl<T: Scalar> Parameters<T> for ModelParams<T> {
    fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (b, p) in &self.branches {
            out.extend(p.named_tensors().into_iter().map(|(n, t)| (format!("branch.{b}.{n}"), t)));
        }
        for (i, p) in self.fusion.iter().enumerate() {
            out.extend(p.named_tensors().into_iter().map(|(n, t)| (format!("fusion.{i}.{n}"), t)));
        }
        out.extend(self.head.named_tensors().into_iter().map(|(n, t)| (format!("head.{n}"), t)));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for (_, p) in &mut self.branches {
            out.extend(p.tensors_mut());
        }
        for p in &mut self.fusion {
            out.extend(p.tensors_mut());
        }
        out.extend(self.head.tensors_mut());
        out
    }
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    branch_traces: Vec<LayerTrace<T>>,
    fusion_traces: Vec<LayerTrace<T>>,
    fused: Tensor<T>,
    fused_mask: Vec<u8>,
    pooled: Tensor<T>,
    head: MlpTrace<T>,
    rows_per_branch: usize,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn score(&self) -> T {
        self.head.output
    }

    /// Output of the fusion stage (`kL × d`).
    pub fn fused(&self) -> &Tensor<T> {
        &self.fused
    }

    pub fn fused_mask(&self) -> &[u8] {
        &self.fused_mask
    }

    pub fn pooled(&self) -> &Tensor<T> {
        &self.pooled
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradingModel<T> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
}

impl<T: Scalar> GradingModel<T> {
    pub fn init(config: ModelConfig) -> Result<Self, ModelError> {
        let params = ModelParams::init(&config)?;
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams<T>) -> Result<Self, ModelError> {
        config.validate()?;
        if !params.matches(&config) {
            return Err(ModelError::Config("parameters do not match model configuration".into()));
        }
        Ok(Self { config, params })
    }

    pub fn forward_traced(&self, features: &ItemFeatures<T>) -> Result<ForwardTrace<T>, ModelError> {
        forward_with(&self.params, features)
    }

    /// Predicted score in (0, 1).
    pub fn forward(&self, features: &ItemFeatures<T>) -> Result<T, ModelError> {
        self.forward_traced(features).map(|t| t.score())
    }

    /// Accumulates `dL/dparams` for one item given `dL/dŷ`.
    pub fn backward(&self, trace: &ForwardTrace<T>, dscore: T, grads: &mut ModelParams<T>) -> Result<(), ModelError> {
        backward_with(&self.params, trace, dscore, grads)
    }
}

pub(crate) fn forward_with<T: Scalar>(params: &ModelParams<T>, features: &ItemFeatures<T>) -> Result<ForwardTrace<T>, ModelError> {
    if features.branches.len() != params.branches.len()
        || features.branches.iter().zip(&params.branches).any(|((a, _), (b, _))| a != b)
    {
        return Err(ModelError::Config("item features do not match the active branch set".into()));
    }
    let mut outputs = Vec::with_capacity(params.branches.len());
    let mut branch_traces = Vec::with_capacity(params.branches.len());
    let mut fused_mask = Vec::new();
    let mut rows_per_branch = 0;
    for ((_, m), (_, layer)) in features.branches.iter().zip(&params.branches) {
        let (h, tr) = layer.forward_traced(&m.values, &m.mask)?;
        rows_per_branch = m.values.rows();
        outputs.push(h);
        branch_traces.push(tr);
        fused_mask.extend_from_slice(&m.mask);
    }
    let refs: Vec<&Tensor<T>> = outputs.iter().collect();
    let mut fused = Tensor::concat_rows(&refs)?;
    let mut fusion_traces = Vec::with_capacity(params.fusion.len());
    for layer in &params.fusion {
        let (h, tr) = layer.forward_traced(&fused, &fused_mask)?;
        fused = h;
        fusion_traces.push(tr);
    }
    let pooled = mean_pool(&fused, &fused_mask)?;
    let head = params.head.forward_traced(&pooled)?;
    if !head.output.is_finite() {
        return Err(NnError::Numeric("non-finite prediction".into()).into());
    }
    Ok(ForwardTrace { branch_traces, fusion_traces, fused, fused_mask, pooled, head, rows_per_branch })
}

pub(crate) fn backward_with<T: Scalar>(
    params: &ModelParams<T>,
    trace: &ForwardTrace<T>,
    dscore: T,
    grads: &mut ModelParams<T>,
) -> Result<(), ModelError> {
    let dpooled = params.head.backward(&trace.head, dscore, &mut grads.head)?;
    let mut dfused = mean_pool_backward(&dpooled, &trace.fused_mask);
    for ((layer, tr), g) in params.fusion.iter().zip(&trace.fusion_traces).zip(grads.fusion.iter_mut()).rev() {
        dfused = layer.backward(tr, &dfused, g, true)?.expect("input gradient requested");
    }
    let l = trace.rows_per_branch;
    for (k, (((_, layer), tr), (_, g))) in params.branches.iter().zip(&trace.branch_traces).zip(grads.branches.iter_mut()).enumerate() {
        let dh = dfused.slice_rows(k * l, l);
        layer.backward(tr, &dh, g, false)?;
    }
    Ok(())
}
