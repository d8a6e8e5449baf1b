//! Provider-agnostic access to chat-completion and embedding endpoints.
//!
//! [`Gateway`] wraps a [`CompletionProvider`] and an [`EmbeddingProvider`]
//! with a content-addressed disk cache, retry with a backoff schedule, an
//! optional request-rate limit and a bound on in-flight requests.

mod cache;
mod http;
pub mod mock;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{CachedCompletion, ResponseCache};
pub use http::{OpenAiCompatible, OpenAiCompatibleEmbedder};

use crate::artifact::{sha256_hex, ArtifactError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_id: String,
    pub prompt: String,
    /// `None` leaves sampling temperature to the provider.
    pub temperature: Option<f64>,
    pub max_tokens: u32,
    /// Pipeline stage label, carried into errors.
    pub request_tag: String,
}

impl CompletionRequest {
    /// Hex SHA-256 over the canonical JSON form (fields in declaration order).
    pub fn request_hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("request serializes"))
    }

    fn check(&self) -> Result<(), GatewayError> {
        if self.prompt.is_empty() {
            return Err(GatewayError::InvalidRequest {
                tag: self.request_tag.clone(),
                message: "empty prompt".into(),
            });
        }
        if let Some(t) = self.temperature {
            if !(t.is_finite() && t >= 0.0) {
                return Err(GatewayError::InvalidRequest {
                    tag: self.request_tag.clone(),
                    message: format!("temperature {t} must be finite and >= 0"),
                });
            }
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest {
                tag: self.request_tag.clone(),
                message: "max_tokens must be positive".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderReply {
    pub text: String,
    pub usage: Option<TokenUsage>,
}

impl From<String> for ProviderReply {
    fn from(text: String) -> Self {
        Self { text, usage: None }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    /// Network or server-side failure; retried.
    #[error("transport: {0}")]
    Transport(String),
    /// Refusal, empty body or malformed payload; not retried.
    #[error("content: {0}")]
    Content(String),
}

pub trait CompletionProvider: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<ProviderReply, ProviderError>;
}

pub trait EmbeddingProvider: Send + Sync {
    fn embed_batch(&self, model_id: &str, texts: &[String])
        -> Result<Vec<Vec<f64>>, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub model_id: String,
    pub dim: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("[{tag}] transport failure after {attempts} attempt(s): {message}")]
    Transport {
        tag: String,
        attempts: u32,
        message: String,
    },
    #[error("[{tag}] provider returned unusable content: {message}")]
    Content { tag: String, message: String },
    #[error("[{tag}] invalid request: {message}")]
    InvalidRequest { tag: String, message: String },
    #[error("embedding model `{model_id}` returned dimension {found}, expected {expected}")]
    DimensionMismatch {
        model_id: String,
        expected: usize,
        found: usize,
    },
    #[error("embedding model `{model_id}` returned a non-finite value")]
    NonFinite { model_id: String },
    #[error("embedding input must be non-empty")]
    EmptyEmbeddingInput,
    #[error("response cache: {0}")]
    Cache(#[from] ArtifactError),
    #[error("provider configuration: {0}")]
    Config(String),
}

impl GatewayError {
    pub fn is_transport(&self) -> bool {
        matches!(self, GatewayError::Transport { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    /// Any endpoint speaking the `/chat/completions` + `/embeddings` JSON shape.
    #[serde(alias = "openai-compatible")]
    OpenaiCompatible,
    /// Offline deterministic provider, optionally driven by a replay file.
    #[default]
    Mock,
}

fn default_concurrency() -> usize {
    4
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> Vec<u64> {
    vec![500, 2000, 8000]
}
fn default_timeout() -> u64 {
    120
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    #[serde(default)]
    pub kind: ProviderKind,
    #[serde(default)]
    pub endpoint_url: String,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: String,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// Sleep before retry `i` is `backoff_ms[min(i, len - 1)]`.
    #[serde(default = "default_backoff")]
    pub backoff_ms: Vec<u64>,
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Mock only: scripted responses.
    #[serde(default)]
    pub replay_file: Option<PathBuf>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            endpoint_url: String::new(),
            api_key_env: String::new(),
            max_concurrency: default_concurrency(),
            max_retries: default_retries(),
            backoff_ms: default_backoff(),
            requests_per_minute: None,
            timeout_secs: default_timeout(),
            replay_file: None,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_concurrency == 0 {
            return Err(GatewayError::Config("max_concurrency must be >= 1".into()));
        }
        if self.kind == ProviderKind::OpenaiCompatible {
            if self.endpoint_url.is_empty() {
                return Err(GatewayError::Config("endpoint_url is required".into()));
            }
            if self.api_key_env.is_empty() {
                return Err(GatewayError::Config("api_key_env is required".into()));
            }
        }
        if self.requests_per_minute == Some(0) {
            return Err(GatewayError::Config(
                "requests_per_minute must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff: Vec<Duration>,
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self::default()
    }

    fn delay(&self, retry: usize) -> Duration {
        match self.backoff.len() {
            0 => Duration::ZERO,
            n => self.backoff[retry.min(n - 1)],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Completion {
    pub text: String,
    pub cached: bool,
    pub request_hash: String,
}

/// Spaces request starts at least `interval` apart.
struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    fn per_minute(rpm: u32) -> Self {
        Self {
            interval: Duration::from_secs(60) / rpm,
            next: Mutex::new(Instant::now()),
        }
    }

    fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock().unwrap();
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct GatewayStats {
    pub provider_calls: u64,
    pub cache_hits: u64,
}

pub struct Gateway {
    completions: Arc<dyn CompletionProvider>,
    embeddings: Arc<dyn EmbeddingProvider>,
    embed_model: String,
    cache: Option<ResponseCache>,
    retry: RetryPolicy,
    max_concurrency: usize,
    limiter: Option<RateLimiter>,
    dims: Mutex<HashMap<String, usize>>,
    provider_calls: AtomicU64,
    cache_hits: AtomicU64,
}

impl Gateway {
    pub fn new(
        completions: Arc<dyn CompletionProvider>,
        embeddings: Arc<dyn EmbeddingProvider>,
        embed_model: impl Into<String>,
    ) -> Self {
        Self {
            completions,
            embeddings,
            embed_model: embed_model.into(),
            cache: None,
            retry: RetryPolicy::none(),
            max_concurrency: 1,
            limiter: None,
            dims: Mutex::new(HashMap::new()),
            provider_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        }
    }

    /// Builds providers from config. Mock providers ignore endpoint and key.
    pub fn from_config(
        config: &ProviderConfig,
        embed_model: &str,
        cache_dir: Option<PathBuf>,
    ) -> Result<Self, GatewayError> {
        config.validate()?;
        let (completions, embeddings): (Arc<dyn CompletionProvider>, Arc<dyn EmbeddingProvider>) =
            match config.kind {
                ProviderKind::Mock => {
                    let scripted = match &config.replay_file {
                        Some(path) => mock::ScriptedProvider::from_replay_file(path)?,
                        None => mock::ScriptedProvider::default(),
                    };
                    let scripted = Arc::new(scripted.with_fallback(mock::SimulatedModel));
                    (scripted.clone(), scripted)
                }
                ProviderKind::OpenaiCompatible => {
                    let key = std::env::var(&config.api_key_env).map_err(|_| {
                        GatewayError::Config(format!(
                            "environment variable {} is not set",
                            config.api_key_env
                        ))
                    })?;
                    let timeout = Duration::from_secs(config.timeout_secs);
                    (
                        Arc::new(OpenAiCompatible::new(
                            &config.endpoint_url,
                            key.clone(),
                            timeout,
                        )),
                        Arc::new(OpenAiCompatibleEmbedder::new(
                            &config.endpoint_url,
                            key,
                            timeout,
                        )),
                    )
                }
            };
        let mut gw = Gateway::new(completions, embeddings, embed_model)
            .with_retry(RetryPolicy {
                max_retries: config.max_retries,
                backoff: config
                    .backoff_ms
                    .iter()
                    .map(|ms| Duration::from_millis(*ms))
                    .collect(),
            })
            .with_max_concurrency(config.max_concurrency);
        if let Some(rpm) = config.requests_per_minute {
            gw.limiter = Some(RateLimiter::per_minute(rpm));
        }
        if let Some(dir) = cache_dir {
            gw = gw.with_cache(ResponseCache::open(dir)?);
        }
        Ok(gw)
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_concurrency(mut self, n: usize) -> Self {
        self.max_concurrency = n.max(1);
        self
    }

    pub fn embed_model(&self) -> &str {
        &self.embed_model
    }

    pub fn max_concurrency(&self) -> usize {
        self.max_concurrency
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            provider_calls: self.provider_calls.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
        }
    }

    pub fn complete(&self, req: &CompletionRequest) -> Result<Completion, GatewayError> {
        req.check()?;
        let hash = req.request_hash();
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get_completion(&hash)? {
                self.cache_hits.fetch_add(1, Ordering::Relaxed);
                return Ok(Completion {
                    text: hit.text,
                    cached: true,
                    request_hash: hash,
                });
            }
        }
        let attempts = self.retry.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.retry.delay(attempt as usize - 1));
            }
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            self.provider_calls.fetch_add(1, Ordering::Relaxed);
            match self.completions.complete(req) {
                Ok(reply) if reply.text.trim().is_empty() => {
                    return Err(GatewayError::Content {
                        tag: req.request_tag.clone(),
                        message: "empty completion".into(),
                    });
                }
                Ok(reply) => {
                    if let Some(cache) = &self.cache {
                        cache.put_completion(&hash, req, &reply)?;
                    }
                    return Ok(Completion {
                        text: reply.text,
                        cached: false,
                        request_hash: hash,
                    });
                }
                Err(ProviderError::Content(message)) => {
                    return Err(GatewayError::Content {
                        tag: req.request_tag.clone(),
                        message,
                    });
                }
                Err(ProviderError::Transport(message)) => {
                    tracing::debug!(tag = %req.request_tag, attempt, "transport error: {message}");
                    last = message;
                }
            }
        }
        Err(GatewayError::Transport {
            tag: req.request_tag.clone(),
            attempts,
            message: last,
        })
    }

    /// Issues all requests with at most `max_concurrency` in flight. Results
    /// come back in input order.
    pub fn complete_all(
        &self,
        reqs: &[CompletionRequest],
    ) -> Vec<Result<Completion, GatewayError>> {
        bounded_map(reqs, self.max_concurrency, |r| self.complete(r))
    }

    /// One vector per input, in order. Each distinct text reaches the
    /// provider at most once per cache.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() || texts.iter().any(|t| t.is_empty()) {
            return Err(GatewayError::EmptyEmbeddingInput);
        }
        let model = self.embed_model.as_str();
        let mut found: HashMap<&str, Vec<f64>> = HashMap::new();
        let mut missing: Vec<&str> = Vec::new();
        for text in texts {
            let text = text.as_str();
            if found.contains_key(text) || missing.contains(&text) {
                continue;
            }
            let hit = match &self.cache {
                Some(cache) => cache.get_embedding(model, text)?,
                None => None,
            };
            match hit {
                Some(v) => {
                    self.cache_hits.fetch_add(1, Ordering::Relaxed);
                    found.insert(text, v);
                }
                None => missing.push(text),
            }
        }
        if !missing.is_empty() {
            let owned: Vec<String> = missing.iter().map(|t| t.to_string()).collect();
            let fresh = self.embed_uncached(model, &owned)?;
            for (text, values) in missing.into_iter().zip(fresh) {
                if let Some(cache) = &self.cache {
                    cache.put_embedding(model, text, &values)?;
                }
                found.insert(text, values);
            }
        }
        texts
            .iter()
            .map(|t| {
                let values = found[t.as_str()].clone();
                self.check_dim(model, &values)?;
                Ok(EmbeddingVector {
                    model_id: model.to_string(),
                    dim: values.len(),
                    values,
                })
            })
            .collect()
    }

    fn embed_uncached(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        let attempts = self.retry.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.retry.delay(attempt as usize - 1));
            }
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            self.provider_calls.fetch_add(1, Ordering::Relaxed);
            match self.embeddings.embed_batch(model, texts) {
                Ok(vectors) => {
                    if vectors.len() != texts.len() {
                        return Err(GatewayError::Content {
                            tag: "embed".into(),
                            message: format!(
                                "{} vectors for {} inputs",
                                vectors.len(),
                                texts.len()
                            ),
                        });
                    }
                    for v in &vectors {
                        if v.iter().any(|x| !x.is_finite()) {
                            return Err(GatewayError::NonFinite {
                                model_id: model.to_string(),
                            });
                        }
                        self.check_dim(model, v)?;
                    }
                    return Ok(vectors);
                }
                Err(ProviderError::Content(message)) => {
                    return Err(GatewayError::Content {
                        tag: "embed".into(),
                        message,
                    })
                }
                Err(ProviderError::Transport(message)) => last = message,
            }
        }
        Err(GatewayError::Transport {
            tag: "embed".into(),
            attempts,
            message: last,
        })
    }

    fn check_dim(&self, model: &str, values: &[f64]) -> Result<(), GatewayError> {
        let mut dims = self.dims.lock().unwrap();
        let expected = *dims.entry(model.to_string()).or_insert(values.len());
        if expected != values.len() || values.is_empty() {
            return Err(GatewayError::DimensionMismatch {
                model_id: model.to_string(),
                expected,
                found: values.len(),
            });
        }
        Ok(())
    }
}

/// Maps `f` over `items` on up to `workers` scoped threads, preserving order.
pub fn bounded_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every slot filled"))
        .collect()
}
