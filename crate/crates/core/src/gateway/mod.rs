//! Single choke-point for all model calls: pluggable backends, a
//! content-addressed response cache, retries, and rate limiting.
//!
//! Every pipeline stage goes through [`Gateway::cached_complete`], so a warm
//! cache replays an entire run without touching the backend.

mod http;
mod limiter;
mod mock;

pub use http::HttpBackend;
pub use limiter::{Clock, RateLimitConfig, SystemClock, VirtualClock};
pub use mock::{FixtureSelector, MockBackend};

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ImagePayload;
use crate::util::sha256_hex;

use limiter::{InFlightGate, SlidingWindowLimiter};

/// Which pipeline stage a request belongs to; part of the cache key and the
/// fixture-matching space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptRole {
    ReasonInference,
    EnsembleGeneration,
    ClusterDiscovery,
    Aggregation,
    Assignment,
    Monitor,
    TopicSummarization,
}

impl PromptRole {
    /// Roles allowed to carry image parts.
    pub fn is_multimodal(self) -> bool {
        matches!(self, PromptRole::ReasonInference | PromptRole::Monitor)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PromptRole::ReasonInference => "reason_inference",
            PromptRole::EnsembleGeneration => "ensemble_generation",
            PromptRole::ClusterDiscovery => "cluster_discovery",
            PromptRole::Aggregation => "aggregation",
            PromptRole::Assignment => "assignment",
            PromptRole::Monitor => "monitor",
            PromptRole::TopicSummarization => "topic_summarization",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for DecodingParams {
    fn default() -> Self {
        // Temperature 0 everywhere: diversity comes from the prompt ensemble,
        // not sampling noise, and determinism keeps the cache meaningful.
        DecodingParams { temperature: 0.0, max_output_tokens: 4096 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessagePart {
    Text(String),
    Image(ImagePayload),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub role: PromptRole,
    pub model_id: String,
    pub messages: Vec<MessagePart>,
    pub decoding: DecodingParams,
}

impl ModelRequest {
    pub fn new(
        role: PromptRole,
        model_id: impl Into<String>,
        messages: Vec<MessagePart>,
        decoding: DecodingParams,
    ) -> Result<Self> {
        if messages.is_empty() {
            return Err(Error::Precondition("model request needs at least one message part".into()));
        }
        if !role.is_multimodal() && messages.iter().any(|m| matches!(m, MessagePart::Image(_))) {
            return Err(Error::Precondition(format!(
                "role {} does not accept image parts",
                role.as_str()
            )));
        }
        Ok(ModelRequest { role, model_id: model_id.into(), messages, decoding })
    }

    /// All text parts joined by newlines; the fixture substring match space.
    pub fn prompt_text(&self) -> String {
        let texts: Vec<&str> = self
            .messages
            .iter()
            .filter_map(|m| match m {
                MessagePart::Text(t) => Some(t.as_str()),
                MessagePart::Image(_) => None,
            })
            .collect();
        texts.join("\n")
    }

    /// Canonical serialization hashed into the cache key: model, role,
    /// decoding, text parts, and image *content digests* (never paths).
    fn canonical_value(&self) -> serde_json::Value {
        let parts: Vec<serde_json::Value> = self
            .messages
            .iter()
            .map(|m| match m {
                MessagePart::Text(t) => serde_json::json!({ "text": t }),
                MessagePart::Image(img) => serde_json::json!({ "image_digest": img.digest }),
            })
            .collect();
        serde_json::json!({
            "model_id": self.model_id,
            "role": self.role.as_str(),
            "decoding": {
                "temperature": self.decoding.temperature,
                "max_output_tokens": self.decoding.max_output_tokens,
            },
            "parts": parts,
        })
    }

    pub fn cache_key(&self) -> CacheKey {
        let canonical = self.canonical_value().to_string();
        CacheKey { digest: sha256_hex(canonical.as_bytes()) }
    }
}

/// Content address of a request.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CacheKey {
    digest: String,
}

impl CacheKey {
    pub fn from_hex(digest: impl Into<String>) -> Self {
        CacheKey { digest: digest.into() }
    }

    pub fn as_hex(&self) -> &str {
        &self.digest
    }
}

impl std::fmt::Display for CacheKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.digest)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub usage: Option<TokenUsage>,
    pub backend_id: String,
    pub cache_hit: bool,
    pub latency_s: f64,
}

/// What a backend returns for one successful call.
#[derive(Debug, Clone)]
pub struct BackendReply {
    pub text: String,
    pub usage: Option<TokenUsage>,
    pub latency_s: f64,
}

#[derive(Debug, Clone)]
pub enum BackendError {
    /// Transport/5xx/429-class failure; eligible for retry.
    Transient(String),
    /// Permanent unavailability (no fixture, bad credentials); never retried.
    Unavailable(String),
    /// The backend answered with something structurally invalid; never
    /// retried because parse failures are deterministic.
    Protocol(String),
}

pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, req: &ModelRequest) -> std::result::Result<BackendReply, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_s: f64,
    pub max_delay_s: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3, base_delay_s: 0.2, max_delay_s: 5.0 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GatewayConfig {
    pub retry: RetryPolicy,
    pub rate_limit: Option<RateLimitConfig>,
    /// Response cache root; `None` disables caching.
    pub cache_dir: Option<PathBuf>,
}

/// Cumulative per-process call counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    pub backend_calls: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub retries: u64,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    key: CacheKey,
    request: serde_json::Value,
    response: StoredResponse,
}

#[derive(Serialize, Deserialize)]
struct StoredResponse {
    text: String,
    usage: Option<TokenUsage>,
    backend_id: String,
    latency_s: f64,
}

/// Thread-safe gateway; callers may fan out freely, the gateway enforces the
/// global in-flight cap and request budget.
pub struct Gateway {
    backend: Arc<dyn Backend>,
    config: GatewayConfig,
    clock: Arc<dyn Clock>,
    limiter: Option<SlidingWindowLimiter>,
    in_flight: Option<InFlightGate>,
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
    cache_misses: AtomicU64,
    retries: AtomicU64,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, config: GatewayConfig) -> Self {
        Self::with_clock(backend, config, Arc::new(SystemClock::new()))
    }

    pub fn with_clock(backend: Arc<dyn Backend>, config: GatewayConfig, clock: Arc<dyn Clock>) -> Self {
        let limiter = config
            .rate_limit
            .as_ref()
            .map(|rl| SlidingWindowLimiter::new(rl.requests_per_minute, clock.clone()));
        let in_flight = config.rate_limit.as_ref().map(|rl| InFlightGate::new(rl.max_in_flight));
        Gateway {
            backend,
            config,
            clock,
            limiter,
            in_flight,
            backend_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
            cache_misses: AtomicU64::new(0),
            retries: AtomicU64::new(0),
        }
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            backend_calls: self.backend_calls.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
            cache_misses: self.cache_misses.load(Ordering::Relaxed),
            retries: self.retries.load(Ordering::Relaxed),
        }
    }

    /// Call the backend with retry and rate limiting; never consults the cache.
    pub fn complete(&self, req: &ModelRequest) -> Result<ModelResponse> {
        let retry = &self.config.retry;
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            let _slot = self.in_flight.as_ref().map(|gate| gate.enter());
            self.backend_calls.fetch_add(1, Ordering::Relaxed);
            match self.backend.complete(req) {
                Ok(reply) => {
                    return Ok(ModelResponse {
                        text: reply.text,
                        usage: reply.usage,
                        backend_id: self.backend.id().to_string(),
                        cache_hit: false,
                        latency_s: reply.latency_s,
                    })
                }
                Err(BackendError::Transient(msg)) => {
                    if attempt >= retry.max_attempts {
                        return Err(Error::BackendUnavailable(format!(
                            "{msg} (after {attempt} attempts)"
                        )));
                    }
                    self.retries.fetch_add(1, Ordering::Relaxed);
                    let delay = (retry.base_delay_s * 2f64.powi(attempt as i32 - 1))
                        .min(retry.max_delay_s);
                    self.clock.sleep_s(delay);
                }
                Err(BackendError::Unavailable(msg)) => return Err(Error::BackendUnavailable(msg)),
                Err(BackendError::Protocol(msg)) => return Err(Error::BackendProtocol(msg)),
            }
        }
    }

    /// Cache-through variant of [`Gateway::complete`]. A hit returns the
    /// stored response with `cache_hit = true` and zero backend invocations;
    /// a corrupt entry is treated as a miss and rewritten.
    pub fn cached_complete(&self, req: &ModelRequest) -> Result<ModelResponse> {
        let Some(root) = self.config.cache_dir.clone() else {
            return self.complete(req);
        };
        let key = req.cache_key();
        let path = root.join(format!("{}.json", key.as_hex()));
        if path.exists() {
            match std::fs::read(&path)
                .map_err(Error::Io)
                .and_then(|bytes| serde_json::from_slice::<CacheEntry>(&bytes).map_err(Error::Json))
            {
                Ok(entry) if entry.key == key => {
                    self.cache_hits.fetch_add(1, Ordering::Relaxed);
                    return Ok(ModelResponse {
                        text: entry.response.text,
                        usage: entry.response.usage,
                        backend_id: entry.response.backend_id,
                        cache_hit: true,
                        latency_s: entry.response.latency_s,
                    });
                }
                Ok(_) => log::warn!("cache entry {} has mismatched key; treating as miss", path.display()),
                Err(err) => log::warn!("corrupt cache entry {}: {err}; treating as miss", path.display()),
            }
        }
        self.cache_misses.fetch_add(1, Ordering::Relaxed);
        let response = self.complete(req)?;
        let entry = CacheEntry {
            key,
            request: req.canonical_value(),
            response: StoredResponse {
                text: response.text.clone(),
                usage: response.usage,
                backend_id: response.backend_id.clone(),
                latency_s: response.latency_s,
            },
        };
        std::fs::create_dir_all(&root)?;
        std::fs::write(&path, serde_json::to_vec_pretty(&entry)?)?;
        Ok(response)
    }
}
