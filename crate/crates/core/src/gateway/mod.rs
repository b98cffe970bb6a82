//! Chat-completion gateway: one request/response contract over remote and
//! mock providers, with retry and an on-disk response cache.

mod cache;
mod http;
mod mock;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_key, CacheEntry, ResponseCache};
pub use http::{post_json, HttpChatProvider};
pub use mock::{MockBehavior, MockProvider, MockRule};

pub const MAX_TOKENS_INSIGHT: u32 = 512;
pub const MAX_TOKENS_CLASSIFICATION: u32 = 256;
pub const MAX_TOKENS_AGENT: u32 = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, prompt: impl Into<String>, max_tokens: u32) -> Self {
        Self {
            model: model.into(),
            prompt: prompt.into(),
            temperature: 0.0,
            max_tokens,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.prompt.is_empty() {
            return Err(GatewayError::InvalidRequest("prompt is empty".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be finite and >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub model: String,
    #[serde(default)]
    pub usage: Usage,
    #[serde(default)]
    pub from_cache: bool,
}

/// A single failed provider attempt.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderFailure {
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("malformed provider response: {0}")]
    BadResponse(String),
}

impl ProviderFailure {
    pub fn is_transient(&self) -> bool {
        match self {
            ProviderFailure::Status { status, .. } => *status == 429 || *status >= 500,
            ProviderFailure::Transport(_) | ProviderFailure::Timeout => true,
            ProviderFailure::BadResponse(_) => false,
        }
    }
}

pub trait ChatProvider: Send + Sync {
    /// Model identifier recorded on generated artifacts.
    fn model(&self) -> &str;

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderFailure>;
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("provider error after {attempts} attempt(s) (status {status:?}): {body}")]
    ProviderError {
        status: Option<u16>,
        body: String,
        attempts: u32,
    },
    #[error("provider timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("response cache {path} is corrupt at line {line}: {reason}")]
    CacheCorrupt {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("response cache i/o: {0}")]
    CacheIo(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(20),
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_retries: u32) -> Self {
        Self {
            max_retries,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// Provider plus retry policy and optional response cache.
///
/// Safe to share across threads. With a cache attached, concurrent requests
/// for the same key are serialized so the provider sees at most one call per
/// unique request.
pub struct Gateway {
    provider: Arc<dyn ChatProvider>,
    retry: RetryPolicy,
    cache: Option<Arc<ResponseCache>>,
    inflight: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    provider_calls: AtomicU64,
}

impl Gateway {
    pub fn new(provider: Arc<dyn ChatProvider>) -> Self {
        Self {
            provider,
            retry: RetryPolicy::default(),
            cache: None,
            inflight: Mutex::new(HashMap::new()),
            provider_calls: AtomicU64::new(0),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_cache(mut self, cache: Arc<ResponseCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn model(&self) -> &str {
        self.provider.model()
    }

    /// Number of provider attempts issued so far, retries included.
    pub fn provider_calls(&self) -> u64 {
        self.provider_calls.load(Ordering::SeqCst)
    }

    /// Sends `req` straight to the provider, retrying transient failures.
    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let mut attempt = 0;
        loop {
            self.provider_calls.fetch_add(1, Ordering::SeqCst);
            let failure = match self.provider.complete(req) {
                Ok(mut resp) => {
                    resp.from_cache = false;
                    return Ok(resp);
                }
                Err(f) => f,
            };
            let attempts = attempt + 1;
            if !failure.is_transient() || attempt >= self.retry.max_retries {
                return Err(match failure {
                    ProviderFailure::Timeout => GatewayError::Timeout { attempts },
                    ProviderFailure::Status { status, body } => GatewayError::ProviderError {
                        status: Some(status),
                        body,
                        attempts,
                    },
                    other => GatewayError::ProviderError {
                        status: None,
                        body: other.to_string(),
                        attempts,
                    },
                });
            }
            let delay = self.retry.delay(attempt);
            if !delay.is_zero() {
                std::thread::sleep(delay);
            }
            attempt += 1;
        }
    }

    /// Serves from the cache when possible, otherwise completes and stores.
    pub fn cached_complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let Some(cache) = &self.cache else {
            return self.complete(req);
        };
        req.validate()?;
        let key = cache_key(req);
        if let Some(hit) = cache.get(&key) {
            return Ok(hit);
        }
        let slot = {
            let mut inflight = self.inflight.lock().expect("inflight lock poisoned");
            inflight.entry(key.clone()).or_default().clone()
        };
        let _guard = slot.lock().expect("request slot poisoned");
        if let Some(hit) = cache.get(&key) {
            return Ok(hit);
        }
        let result = self.complete(req).and_then(|resp| cache.insert(&key, &resp).map(|_| resp));
        self.inflight.lock().expect("inflight lock poisoned").remove(&key);
        result
    }
}
