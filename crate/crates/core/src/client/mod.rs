//! Black-box model access over a chat-completion style HTTP protocol, with
//! answer parsing and a persistent response cache.

pub mod cache;
pub mod parse;
pub mod prompt;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{FestaError, Result};
use crate::instance::{Label, MediaKind, OptionChoice};
use crate::transforms::SampleFamily;

pub use self::cache::{cache_key, CacheKey, DecodeParams, ReplicateIndex, ResponseCache};
pub use self::parse::{parse_answer, parse_confidence, parse_topk, ParsedAnswer};
pub use self::prompt::{render_mcq_prompt, render_topk_prompt, ANSWER_INSTRUCTION, CONFIDENCE_INSTRUCTION};

pub const FAMILY_HEADER: &str = "x-festa-family";
pub const INSTANCE_HEADER: &str = "x-festa-instance";
pub const REPLICATE_HEADER: &str = "x-festa-replicate";
pub const DEFAULT_TOKEN_ENV: &str = "FESTA_API_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3, backoff_ms: 100 }
    }
}

/// Where and how to reach a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelEndpoint {
    pub base_url: String,
    pub model_id: String,
    /// Environment variable holding the bearer token, if any.
    pub token_env: String,
    /// Temperature for stochastic decodes; the original prediction always
    /// decodes at 0.
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_ms: u64,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
}

impl Default for ModelEndpoint {
    fn default() -> Self {
        ModelEndpoint {
            base_url: "http://127.0.0.1:8080/v1".into(),
            model_id: "mock".into(),
            token_env: DEFAULT_TOKEN_ENV.into(),
            temperature: 0.7,
            max_tokens: 64,
            timeout_ms: 30_000,
            retry: RetryPolicy::default(),
            max_in_flight: 16,
        }
    }
}

impl ModelEndpoint {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(FestaError::Config(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if self.max_tokens < 1 {
            return Err(FestaError::Config("max_tokens must be >= 1".into()));
        }
        if self.retry.max_attempts < 1 {
            return Err(FestaError::Config("retry.max_attempts must be >= 1".into()));
        }
        if self.max_in_flight < 1 {
            return Err(FestaError::Config("max_in_flight must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: "user".into(), content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: "assistant".into(), content: content.into() }
    }
}

/// Media bytes attached to the first user turn.
#[derive(Debug, Clone)]
pub struct MediaPayload {
    pub kind: MediaKind,
    pub bytes: Arc<Vec<u8>>,
    pub sha256: String,
}

impl MediaPayload {
    pub fn new(kind: MediaKind, bytes: Vec<u8>) -> Self {
        let sha256 = crate::transforms::sha256_hex(&bytes);
        MediaPayload { kind, bytes: Arc::new(bytes), sha256 }
    }

    fn mime(&self) -> &'static str {
        match self.kind {
            MediaKind::Audio => "audio/wav",
            _ if self.bytes.starts_with(&[0xFF, 0xD8, 0xFF]) => "image/jpeg",
            _ => "image/png",
        }
    }

    fn data_uri(&self) -> String {
        format!(
            "data:{};base64,{}",
            self.mime(),
            base64::engine::general_purpose::STANDARD.encode(self.bytes.as_slice())
        )
    }
}

/// Out-of-band identification read by behavioral mock servers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sideband {
    pub instance_id: String,
    pub family: SampleFamily,
}

/// One chat request.
#[derive(Debug, Clone)]
pub struct ChatCall {
    pub messages: Vec<ChatMessage>,
    pub media: Option<MediaPayload>,
    pub temperature: f64,
    pub replicate: ReplicateIndex,
    pub sideband: Option<Sideband>,
}

impl ChatCall {
    pub fn text(prompt: String, temperature: f64, replicate: ReplicateIndex) -> Self {
        ChatCall {
            messages: vec![ChatMessage::user(prompt)],
            media: None,
            temperature,
            replicate,
            sideband: None,
        }
    }

    /// Multiple-choice answer request.
    pub fn mcq(
        question: &str,
        options: &[OptionChoice],
        media: Option<MediaPayload>,
        temperature: f64,
        replicate: ReplicateIndex,
        sideband: Option<Sideband>,
    ) -> Self {
        ChatCall {
            messages: vec![ChatMessage::user(render_mcq_prompt(question, options))],
            media,
            temperature,
            replicate,
            sideband,
        }
    }

    /// Canonical text of every turn; part of the cache key.
    pub fn rendered_prompt(&self) -> String {
        serde_json::to_string(&self.messages).expect("messages serialize")
    }

    pub fn media_hash(&self) -> &str {
        self.media.as_ref().map(|m| m.sha256.as_str()).unwrap_or("")
    }
}

/// Raw reply plus bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct RawReply {
    pub raw_text: String,
    pub latency_ms: u64,
    pub cache_hit: bool,
}

/// Reply to a multiple-choice request.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelResponse {
    pub raw_text: String,
    pub parsed_label: ParsedAnswer,
    pub latency_ms: u64,
    pub cache_hit: bool,
}

#[derive(Debug)]
pub struct ModelClient {
    endpoint: ModelEndpoint,
    http: reqwest::Client,
    cache: Option<ResponseCache>,
    token: Option<String>,
    network_calls: AtomicUsize,
}

impl ModelClient {
    pub fn new(endpoint: ModelEndpoint, cache: Option<ResponseCache>) -> Result<Self> {
        endpoint.validate()?;
        let http = reqwest::Client::builder()
            .timeout(Duration::from_millis(endpoint.timeout_ms))
            .build()
            .map_err(|e| FestaError::Config(format!("http client: {e}")))?;
        let token = std::env::var(&endpoint.token_env).ok().filter(|t| !t.is_empty());
        Ok(ModelClient { endpoint, http, cache, token, network_calls: AtomicUsize::new(0) })
    }

    pub fn endpoint(&self) -> &ModelEndpoint {
        &self.endpoint
    }

    pub fn cache(&self) -> Option<&ResponseCache> {
        self.cache.as_ref()
    }

    /// HTTP requests issued so far, retries included.
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::Relaxed)
    }

    pub fn decode_params(&self, temperature: f64) -> DecodeParams {
        DecodeParams { temperature, max_tokens: self.endpoint.max_tokens }
    }

    pub fn key_for(&self, call: &ChatCall) -> CacheKey {
        cache_key(
            &self.endpoint.model_id,
            &call.rendered_prompt(),
            call.media_hash(),
            self.decode_params(call.temperature),
            &call.replicate,
        )
    }

    fn request_body(&self, call: &ChatCall) -> serde_json::Value {
        let mut messages = Vec::with_capacity(call.messages.len());
        let mut media_attached = false;
        for m in &call.messages {
            match (&call.media, media_attached, m.role.as_str()) {
                (Some(media), false, "user") => {
                    media_attached = true;
                    let part = match media.kind {
                        MediaKind::Audio => json!({"type": "audio_url", "audio_url": {"url": media.data_uri()}}),
                        _ => json!({"type": "image_url", "image_url": {"url": media.data_uri()}}),
                    };
                    messages.push(json!({
                        "role": m.role,
                        "content": [{"type": "text", "text": m.content}, part],
                    }));
                }
                _ => messages.push(json!({"role": m.role, "content": m.content})),
            }
        }
        json!({
            "model": self.endpoint.model_id,
            "messages": messages,
            "temperature": call.temperature,
            "max_tokens": self.endpoint.max_tokens,
        })
    }

    /// Request metadata stored next to a cached reply (media by hash only).
    fn cache_request_record(&self, call: &ChatCall) -> serde_json::Value {
        json!({
            "model": self.endpoint.model_id,
            "messages": call.messages,
            "media_sha256": call.media_hash(),
            "temperature": call.temperature,
            "max_tokens": self.endpoint.max_tokens,
            "replicate": call.replicate,
        })
    }

    /// Issues `call`, serving it from the cache when possible.
    pub async fn chat(&self, call: &ChatCall) -> Result<RawReply> {
        let key = self.key_for(call);
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&key).await {
                return Ok(RawReply {
                    raw_text: hit.response.raw_text,
                    latency_ms: hit.response.latency_ms,
                    cache_hit: true,
                });
            }
        }
        let started = Instant::now();
        let raw_text = self.send_with_retries(call).await?;
        let latency_ms = started.elapsed().as_millis() as u64;
        if let Some(cache) = &self.cache {
            cache
                .put(&key, self.cache_request_record(call), cache::CachedResponse { raw_text: raw_text.clone(), latency_ms })
                .await?;
        }
        Ok(RawReply { raw_text, latency_ms, cache_hit: false })
    }

    /// Issues a multiple-choice request and parses the reply against `labels`.
    pub async fn query(&self, call: &ChatCall, labels: &[Label]) -> Result<ModelResponse> {
        let reply = self.chat(call).await?;
        Ok(ModelResponse {
            parsed_label: parse_answer(&reply.raw_text, labels),
            raw_text: reply.raw_text,
            latency_ms: reply.latency_ms,
            cache_hit: reply.cache_hit,
        })
    }

    async fn send_with_retries(&self, call: &ChatCall) -> Result<String> {
        let url = format!("{}/chat/completions", self.endpoint.base_url.trim_end_matches('/'));
        let body = self.request_body(call);
        let attempts = self.endpoint.retry.max_attempts;
        let mut last_err = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                let backoff = self.endpoint.retry.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                tokio::time::sleep(Duration::from_millis(backoff)).await;
            }
            self.network_calls.fetch_add(1, Ordering::Relaxed);
            let mut req = self.http.post(&url).json(&body);
            if let Some(token) = &self.token {
                req = req.bearer_auth(token);
            }
            req = req.header(REPLICATE_HEADER, call.replicate.tag());
            if let Some(sb) = &call.sideband {
                req = req
                    .header(INSTANCE_HEADER, sb.instance_id.as_str())
                    .header(FAMILY_HEADER, sb.family.as_str());
            }
            let resp = match req.send().await {
                Ok(r) => r,
                Err(e) => {
                    tracing::debug!(attempt, error = %e, "transport error");
                    last_err = Some(FestaError::Transport(e.to_string()));
                    continue;
                }
            };
            let status = resp.status();
            let text = match resp.text().await {
                Ok(t) => t,
                Err(e) => {
                    last_err = Some(FestaError::Transport(e.to_string()));
                    continue;
                }
            };
            if status.is_success() {
                return extract_content(&text).ok_or_else(|| FestaError::Upstream {
                    status: status.as_u16(),
                    body: format!("response has no choices[0].message.content: {}", truncate(&text)),
                });
            }
            let err = FestaError::Upstream { status: status.as_u16(), body: truncate(&text) };
            if status.is_server_error() || status.as_u16() == 429 {
                tracing::debug!(attempt, status = status.as_u16(), "retryable upstream status");
                last_err = Some(err);
                continue;
            }
            return Err(err);
        }
        Err(last_err.unwrap_or_else(|| FestaError::Transport("no attempts made".into())))
    }
}

fn truncate(s: &str) -> String {
    s.chars().take(300).collect()
}

fn extract_content(body: &str) -> Option<String> {
    let v: serde_json::Value = serde_json::from_str(body).ok()?;
    let content = v.get("choices")?.get(0)?.get("message")?.get("content")?;
    match content {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Array(parts) => Some(
            parts
                .iter()
                .filter_map(|p| p.get("text").and_then(|t| t.as_str()))
                .collect::<Vec<_>>()
                .join(""),
        ),
        _ => None,
    }
}
