use async_trait::async_trait;
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

/// What a provider sees for one upstream call.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderCall {
    pub template_id: String,
    pub variables: BTreeMap<String, String>,
    pub system: String,
    pub user: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// True when the user message carries a repair instruction.
    pub repair: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    /// Worth retrying: timeouts, rate limits, server errors.
    #[error("transient: {0}")]
    Transient(String),
    #[error("{0}")]
    Fatal(String),
}

#[async_trait]
pub trait ChatProvider: Send + Sync {
    async fn complete(&self, call: &ProviderCall) -> Result<String, ProviderError>;
}

/// OpenAI-compatible `POST {base_url}/chat/completions`.
pub struct OpenAiProvider {
    client: reqwest::Client,
    base_url: String,
    api_key: Option<String>,
}

pub const API_KEY_ENV: &str = "GRADER_LLM_API_KEY";

impl OpenAiProvider {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Result<Self, ProviderError> {
        let client = reqwest::Client::builder().timeout(timeout).build().map_err(|e| ProviderError::Fatal(e.to_string()))?;
        Ok(Self { client, base_url: base_url.into().trim_end_matches('/').to_string(), api_key })
    }

    /// Reads the key from `GRADER_LLM_API_KEY`.
    pub fn from_env(base_url: impl Into<String>, timeout: Duration) -> Result<Self, ProviderError> {
        Self::new(base_url, std::env::var(API_KEY_ENV).ok(), timeout)
    }
}

#[async_trait]
impl ChatProvider for OpenAiProvider {
    async fn complete(&self, call: &ProviderCall) -> Result<String, ProviderError> {
        let body = serde_json::json!({
            "model": call.model,
            "temperature": call.temperature,
            "max_tokens": call.max_tokens,
            "messages": [
                {"role": "system", "content": call.system},
                {"role": "user", "content": call.user},
            ],
        });
        let mut req = self.client.post(format!("{}/chat/completions", self.base_url)).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| ProviderError::Transient(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(ProviderError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = resp.text().await.unwrap_or_default();
            return Err(ProviderError::Fatal(format!("HTTP {status}: {}", text.chars().take(200).collect::<String>())));
        }
        let v: serde_json::Value = resp.json().await.map_err(|e| ProviderError::Transient(e.to_string()))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ProviderError::Fatal("response has no choices[0].message.content".into()))
    }
}

type Responder = dyn Fn(&ProviderCall) -> Result<String, ProviderError> + Send + Sync;

/// In-process provider driven by a closure, with a call counter.
#[derive(Clone)]
pub struct MockProvider {
    respond: Arc<Responder>,
    calls: Arc<AtomicU64>,
    latency: (Duration, Duration),
}

impl MockProvider {
    pub fn new(respond: impl Fn(&ProviderCall) -> Result<String, ProviderError> + Send + Sync + 'static) -> Self {
        Self { respond: Arc::new(respond), calls: Arc::new(AtomicU64::new(0)), latency: (Duration::ZERO, Duration::ZERO) }
    }

    /// Always answers `text`.
    pub fn canned(text: impl Into<String>) -> Self {
        let text = text.into();
        Self::new(move |_| Ok(text.clone()))
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = (latency, latency);
        self
    }

    /// Latency between `min` and `max`, fixed per prompt.
    pub fn with_latency_range(mut self, min: Duration, max: Duration) -> Self {
        self.latency = (min, max.max(min));
        self
    }

    fn latency_for(&self, call: &ProviderCall) -> Duration {
        let (lo, hi) = self.latency;
        if hi == lo {
            return lo;
        }
        let h = call.user.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3));
        let span = (hi - lo).as_micros() as u64;
        lo + Duration::from_micros(h % (span + 1))
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl ChatProvider for MockProvider {
    async fn complete(&self, call: &ProviderCall) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let wait = self.latency_for(call);
        if !wait.is_zero() {
            tokio::time::sleep(wait).await;
        }
        (self.respond)(call)
    }
}
