use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, BackendError, GenerationRequest, GenerationResponse, TokenUsage};

/// Default environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "HYPMIX_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    /// Name of the environment variable with the API key. The key itself
    /// never appears in config files.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    /// Upper bound on a server-requested retry delay.
    pub max_backoff_ms: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            api_key_env: API_KEY_ENV.into(),
            timeout_secs: 120,
            max_retries: 3,
            backoff_ms: 500,
            max_backoff_ms: 30_000,
        }
    }
}

/// Chat-completion client.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    config: RemoteConfig,
    client: Client,
    api_key: Option<String>,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::BackendUnavailable(e.to_string()))?;
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        if api_key.is_none() {
            log::warn!("{} is not set; sending requests without authorization", config.api_key_env);
        }
        Ok(Self {
            config,
            client,
            api_key,
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn attempt(&self, body: &Value) -> Result<GenerationResponse, Attempt> {
        let start = Instant::now();
        let mut req = self.client.post(&self.config.endpoint).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(BackendError::BackendUnavailable(e.to_string())))?;
        let status = resp.status();
        if status == StatusCode::TOO_MANY_REQUESTS {
            let retry_after = resp
                .headers()
                .get(reqwest::header::RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<f64>().ok())
                .filter(|s| s.is_finite() && *s >= 0.0)
                .map(Duration::from_secs_f64);
            return Err(Attempt::Retry(BackendError::RateLimited { retry_after }));
        }
        if status.is_server_error() {
            return Err(Attempt::Retry(BackendError::BackendUnavailable(format!("HTTP {status}"))));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(Attempt::Fatal(BackendError::BackendUnavailable(format!(
                "HTTP {status}: {}",
                text.chars().take(200).collect::<String>()
            ))));
        }
        let value: Value = resp
            .json()
            .map_err(|e| Attempt::Fatal(BackendError::MalformedResponse(e.to_string())))?;
        let latency_ms = start.elapsed().as_millis() as u64;
        parse_completion(&value, latency_ms).map_err(Attempt::Fatal)
    }
}

enum Attempt {
    Retry(BackendError),
    Fatal(BackendError),
}

/// Reads the first choice of a chat-completion response body.
pub(crate) fn parse_completion(value: &Value, latency_ms: u64) -> Result<GenerationResponse, BackendError> {
    let choice = value
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| BackendError::MalformedResponse("no choices".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::MalformedResponse("first choice has no message content".into()))?;
    if text.trim().is_empty() {
        return Err(BackendError::MalformedResponse("empty message content".into()));
    }
    let usage = TokenUsage {
        prompt_tokens: value.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
        completion_tokens: value.pointer("/usage/completion_tokens").and_then(Value::as_u64).unwrap_or(0),
    };
    Ok(GenerationResponse {
        text: text.to_string(),
        finish_reason: choice
            .get("finish_reason")
            .and_then(Value::as_str)
            .unwrap_or("unknown")
            .to_string(),
        latency_ms,
        usage,
    })
}

impl Backend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let body = json!({
            "model": request.model_id,
            "messages": [{"role": "user", "content": request.prompt.rendered()}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Ok(r) => return Ok(r),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) if attempt >= self.config.max_retries => return Err(e),
                Err(Attempt::Retry(e)) => {
                    let backoff = Duration::from_millis(self.config.backoff_ms.saturating_mul(1 << attempt.min(16)));
                    let wait = match &e {
                        BackendError::RateLimited { retry_after: Some(d) } => (*d).max(backoff),
                        _ => backoff,
                    }
                    .min(Duration::from_millis(self.config.max_backoff_ms));
                    log::debug!("retrying after {e} in {wait:?}");
                    std::thread::sleep(wait);
                    attempt += 1;
                }
            }
        }
    }
}
