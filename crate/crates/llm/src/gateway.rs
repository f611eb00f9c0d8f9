use crate::cache::{CacheKey, CacheRecord, RequestSummary, ResponseCache};
use crate::provider::{ChatProvider, ProviderCall, ProviderError};
use crate::template::{extract_json, RenderError, RenderedPrompt, TemplateRegistry, TEMPLATE_VERSION};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};
use thiserror::Error;
use tokio::sync::Semaphore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Live,
    /// Cache only; a miss is an error.
    Replay,
    #[default]
    Mock,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "live" => Ok(Mode::Live),
            "replay" => Ok(Mode::Replay),
            "mock" => Ok(Mode::Mock),
            _ => Err(format!("unknown llm mode {s:?} (expected live, replay or mock)")),
        }
    }
}

/// The `llm` section of the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub base_url: String,
    pub model: String,
    pub parallelism: usize,
    pub mode: Mode,
    pub max_tokens: u32,
    pub retries: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
    pub cache_path: Option<String>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model: "Qwen2.5-72B-Instruct".into(),
            parallelism: 20,
            mode: Mode::Mock,
            max_tokens: 512,
            retries: 2,
            backoff_ms: 200,
            timeout_secs: 60,
            cache_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmRequest {
    pub template_id: String,
    pub template_version: String,
    pub variables: BTreeMap<String, String>,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl LlmRequest {
    pub fn var(mut self, name: &str, value: impl Into<String>) -> Self {
        self.variables.insert(name.to_string(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmResponse {
    pub text: String,
    pub parsed: Option<serde_json::Value>,
    pub cache_hit: bool,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("unknown template {0}")]
    UnknownTemplate(String),
    #[error("missing template variable {0:?}")]
    MissingVariable(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("upstream error: {0}")]
    Upstream(String),
    #[error("malformed output ({reason}): {raw:?}")]
    MalformedOutput { raw: String, reason: String },
    #[error("replay cache has no entry {0}")]
    ReplayMiss(String),
    #[error("cache error: {0}")]
    Cache(String),
}

impl From<RenderError> for LlmError {
    fn from(e: RenderError) -> Self {
        match e {
            RenderError::UnknownTemplate(t) => LlmError::UnknownTemplate(t),
            RenderError::MissingVariable(v) => LlmError::MissingVariable(v),
        }
    }
}

const REPAIR_INSTRUCTION: &str = "Your previous reply could not be parsed. \
Reply again with only the fenced JSON object, exactly in the requested form.";

/// Cached, rate-limited access to a chat-completion provider.
pub struct Gateway {
    config: GatewayConfig,
    registry: TemplateRegistry,
    cache: Arc<ResponseCache>,
    provider: Option<Arc<dyn ChatProvider>>,
    limit: Arc<Semaphore>,
    upstream_calls: AtomicU64,
}

impl Gateway {
    /// `provider` is required in live and mock mode and ignored in replay mode.
    pub fn new(
        config: GatewayConfig,
        registry: TemplateRegistry,
        cache: Arc<ResponseCache>,
        provider: Option<Arc<dyn ChatProvider>>,
    ) -> Result<Self, LlmError> {
        if config.parallelism == 0 {
            return Err(LlmError::InvalidRequest("parallelism must be at least 1".into()));
        }
        let provider = match config.mode {
            Mode::Replay => None,
            _ => Some(provider.ok_or_else(|| LlmError::InvalidRequest(format!("{:?} mode needs a provider", config.mode)))?),
        };
        let limit = Arc::new(Semaphore::new(config.parallelism));
        Ok(Self { config, registry, cache, provider, limit, upstream_calls: AtomicU64::new(0) })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    /// Calls that reached the provider, retries included.
    pub fn upstream_calls(&self) -> u64 {
        self.upstream_calls.load(Ordering::SeqCst)
    }

    /// A request for a registered template using the configured model.
    pub fn request(&self, template_id: &str) -> LlmRequest {
        LlmRequest {
            template_id: template_id.into(),
            template_version: self.registry.get(template_id).map_or(TEMPLATE_VERSION.into(), |t| t.version.clone()),
            variables: BTreeMap::new(),
            model: self.config.model.clone(),
            temperature: 0.0,
            max_tokens: self.config.max_tokens,
        }
    }

    pub fn render_prompt(&self, req: &LlmRequest) -> Result<RenderedPrompt, LlmError> {
        if !(req.temperature >= 0.0) {
            return Err(LlmError::InvalidRequest(format!("temperature {} < 0", req.temperature)));
        }
        Ok(self.registry.render(&req.template_id, &req.template_version, &req.variables)?)
    }

    pub fn cache_key(&self, req: &LlmRequest) -> Result<CacheKey, LlmError> {
        let prompt = self.render_prompt(req)?;
        Ok(CacheKey::compute(&req.template_id, &req.template_version, &prompt.text(), &req.model, req.temperature, req.max_tokens))
    }

    pub async fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let started = Instant::now();
        let prompt = self.render_prompt(req)?;
        let schema = self.registry.get(&req.template_id).and_then(|t| t.schema);
        let key = CacheKey::compute(&req.template_id, &req.template_version, &prompt.text(), &req.model, req.temperature, req.max_tokens);
        let elapsed = |s: Instant| s.elapsed().as_millis() as u64;

        if let Some(hit) = self.cache.get(&key) {
            let parsed = match schema {
                Some(s) => Some(parse_checked(&hit.response_text, s).map_err(|reason| LlmError::MalformedOutput {
                    raw: hit.response_text.clone(),
                    reason: format!("cached response: {reason}"),
                })?),
                None => None,
            };
            return Ok(LlmResponse { text: hit.response_text, parsed, cache_hit: true, latency_ms: elapsed(started) });
        }
        let Some(provider) = &self.provider else {
            return Err(LlmError::ReplayMiss(key.digest));
        };

        let mut call = ProviderCall {
            template_id: req.template_id.clone(),
            variables: req.variables.clone(),
            system: prompt.system.clone(),
            user: prompt.user.clone(),
            model: req.model.clone(),
            temperature: req.temperature,
            max_tokens: req.max_tokens,
            repair: false,
        };
        let mut text = self.call_with_retries(provider.as_ref(), &call).await?;
        let mut parsed = None;
        if let Some(s) = schema {
            match parse_checked(&text, s) {
                Ok(v) => parsed = Some(v),
                Err(first) => {
                    log::warn!("{}: unparseable output ({first}), retrying with repair instruction", req.template_id);
                    call.user = format!("{}\n\n{REPAIR_INSTRUCTION}", prompt.user);
                    call.repair = true;
                    text = self.call_with_retries(provider.as_ref(), &call).await?;
                    parsed = Some(parse_checked(&text, s).map_err(|reason| LlmError::MalformedOutput { raw: text.clone(), reason })?);
                }
            }
        }
        self.cache
            .insert(CacheRecord {
                digest: key.digest,
                request_summary: RequestSummary { template_id: req.template_id.clone(), template_version: req.template_version.clone() },
                response_text: text.clone(),
                model: req.model.clone(),
                created_at: chrono::Utc::now().to_rfc3339(),
            })
            .map_err(|e| LlmError::Cache(e.to_string()))?;
        Ok(LlmResponse { text, parsed, cache_hit: false, latency_ms: elapsed(started) })
    }

    async fn call_with_retries(&self, provider: &dyn ChatProvider, call: &ProviderCall) -> Result<String, LlmError> {
        let mut attempt = 0;
        loop {
            let result = {
                let _permit = self.limit.acquire().await.expect("semaphore never closed");
                self.upstream_calls.fetch_add(1, Ordering::SeqCst);
                provider.complete(call).await
            };
            match result {
                Ok(text) => return Ok(text),
                Err(ProviderError::Transient(e)) if attempt < self.config.retries => {
                    let wait = Duration::from_millis(self.config.backoff_ms << attempt);
                    log::warn!("{}: transient failure ({e}), retry {} in {wait:?}", call.template_id, attempt + 1);
                    tokio::time::sleep(wait).await;
                    attempt += 1;
                }
                Err(e) => return Err(LlmError::Upstream(e.to_string())),
            }
        }
    }
}

fn parse_checked(text: &str, schema: crate::template::OutputSchema) -> Result<serde_json::Value, String> {
    let v = extract_json(text)?;
    schema.check(&v)?;
    Ok(v)
}
