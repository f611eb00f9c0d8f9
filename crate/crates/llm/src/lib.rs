//! LLM access and answer enrichment.
//!
//! [`gateway`] wraps a chat-completion provider with prompt templates, a
//! replayable response cache, retries and a concurrency limit. [`enrich`]
//! turns exam items into the four branch artifacts the grading model reads.

pub mod cache;
pub mod enrich;
pub mod gateway;
pub mod mock;
pub mod provider;
pub mod remote;
pub mod synthetic;
pub mod template;

pub use cache::{CacheKey, CacheRecord, ResponseCache};
pub use enrich::{
    build_question_pool, preprocess_text, retrieve_example, EnrichError, Enricher, ExamplePair, PoolError, QuestionPool, Role,
    StepError, ENRICHMENT_VERSION,
};
pub use gateway::{Gateway, GatewayConfig, LlmError, LlmRequest, LlmResponse, Mode};
pub use mock::RuleBasedLlm;
pub use provider::{ChatProvider, MockProvider, OpenAiProvider, ProviderCall, ProviderError};
pub use template::{OutputSchema, Template, TemplateRegistry};
