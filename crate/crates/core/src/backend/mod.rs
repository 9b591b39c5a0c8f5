//! Text-generation backends, the persistent response cache, and parsing of
//! responses into canonical actions.

mod cache;
mod parse;
mod remote;
mod synthetic;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{ActionLabeling, EnvState};
use crate::prompt::SimulationPrompt;

pub use cache::{cache_key, CacheEntry, CacheStats, ResponseCache, CACHE_DIR_ENV, CACHE_FILE};
pub use parse::{parse_action, ParseError, ParsedAction};
pub use remote::{RemoteBackend, RemoteConfig, API_KEY_ENV};
pub use synthetic::{
    synthetic_sample, LevelCurve, LevelEffect, PolicyOverride, PolicySpec, StateEffect, SyntheticBackend,
    SyntheticPolicy,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("rate limited{}", .retry_after.map(|d| format!(" (retry after {:.1}s)", d.as_secs_f64())).unwrap_or_default())]
    RateLimited { retry_after: Option<Duration> },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cache I/O error: {0}")]
    Cache(String),
}

/// What the prompt was composed from. Backends that cannot read prose
/// (the synthetic policy) act on this instead.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationContext {
    pub persona: BTreeMap<String, u8>,
    pub state: EnvState,
    pub labeling: ActionLabeling,
    /// Ids of every hypothesis in the learner model.
    pub hypotheses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub prompt: Arc<SimulationPrompt>,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Distinguishes repeated draws of the same prompt.
    pub sample_index: u64,
    pub context: Option<Arc<SimulationContext>>,
}

impl GenerationRequest {
    pub fn new(prompt: SimulationPrompt, model_id: &str, temperature: f64, sample_index: u64) -> Self {
        Self {
            prompt: Arc::new(prompt),
            model_id: model_id.to_string(),
            temperature,
            max_tokens: 512,
            sample_index,
            context: None,
        }
    }

    pub fn with_context(mut self, context: SimulationContext) -> Self {
        self.context = Some(Arc::new(context));
        self
    }

    /// Cache key of the request when served by a backend in `namespace`.
    pub fn cache_key(&self, namespace: &str) -> String {
        cache_key(namespace, self.prompt.fingerprint(), &self.model_id, self.temperature, self.sample_index)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub text: String,
    pub finish_reason: String,
    pub latency_ms: u64,
    #[serde(default)]
    pub usage: TokenUsage,
}

pub trait Backend: Send + Sync {
    /// Short name for logs and reports.
    fn name(&self) -> &str;

    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError>;

    /// Separates cached responses of backends that answer the same request
    /// differently.
    fn cache_namespace(&self) -> String {
        self.name().to_string()
    }
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        (**self).complete(request)
    }

    fn cache_namespace(&self) -> String {
        (**self).cache_namespace()
    }
}

/// Serves from the cache when possible, otherwise calls the backend and
/// stores the response.
pub fn generate(
    request: &GenerationRequest,
    backend: &dyn Backend,
    cache: Option<&ResponseCache>,
) -> Result<GenerationResponse, BackendError> {
    if !(request.temperature >= 0.0 && request.temperature.is_finite()) {
        return Err(BackendError::InvalidRequest(format!("temperature {} must be >= 0", request.temperature)));
    }
    if request.max_tokens == 0 {
        return Err(BackendError::InvalidRequest("max_tokens must be positive".into()));
    }
    match cache {
        Some(cache) => cache.get_or_insert_with(&backend.cache_namespace(), request, || backend.complete(request)),
        None => backend.complete(request),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::labeling_a;
    use crate::prompt::{PromptFragment, FragmentKind};
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting(AtomicUsize);

    impl Backend for Counting {
        fn name(&self) -> &str {
            "counting"
        }

        fn complete(&self, r: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok(GenerationResponse {
                text: format!("ok {}\nACTION: EXIT", r.sample_index),
                finish_reason: "stop".into(),
                latency_ms: 0,
                usage: TokenUsage::default(),
            })
        }
    }

    fn request(i: u64) -> GenerationRequest {
        let p = SimulationPrompt::from_fragments(vec![PromptFragment {
            kind: FragmentKind::Global,
            text: "hello".into(),
            source: "t".into(),
        }]);
        GenerationRequest::new(p, "m", 1.0, i)
    }

    #[test]
    fn cache_contract() {
        let backend = Counting(AtomicUsize::new(0));
        let cache = ResponseCache::in_memory();
        assert_eq!(cache.stats(), CacheStats::default());
        let a = generate(&request(0), &backend, Some(&cache)).unwrap();
        let b = generate(&request(0), &backend, Some(&cache)).unwrap();
        assert_eq!(a, b);
        assert_eq!(backend.0.load(Ordering::SeqCst), 1);
        assert_eq!(
            cache.stats(),
            CacheStats {
                hits: 1,
                misses: 1,
                entries: 1
            }
        );
        let c = generate(&request(1), &backend, Some(&cache)).unwrap();
        assert_ne!(a.text, c.text);
        assert_eq!(parse_action(&a.text, &labeling_a()).unwrap().action, crate::environment::Action::Exit);
    }

    #[test]
    fn rejects_bad_requests() {
        let backend = Counting(AtomicUsize::new(0));
        let mut r = request(0);
        r.temperature = -1.0;
        assert!(matches!(generate(&r, &backend, None), Err(BackendError::InvalidRequest(_))));
    }
}
