//! HTTP chat-completion backend. Live mode only; nothing in the test suite
//! depends on it.

use std::time::Instant;

use serde_json::json;

use super::{Backend, BackendError, BackendReply, MessagePart, ModelRequest, TokenUsage};
use crate::error::{Error, Result};
use crate::ingest::ImageContent;

pub struct HttpBackend {
    endpoint: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    /// `api_key_env` names the environment variable holding the key; keys are
    /// never read from configuration files.
    pub fn new(endpoint: impl Into<String>, api_key_env: &str) -> Result<Self> {
        let api_key = std::env::var(api_key_env).map_err(|_| {
            Error::ConfigInvalid(format!("environment variable {api_key_env} is not set"))
        })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(300))
            .build()
            .map_err(|e| Error::ConfigInvalid(format!("http client: {e}")))?;
        Ok(HttpBackend { endpoint: endpoint.into(), api_key, client })
    }

    fn request_body(req: &ModelRequest) -> serde_json::Value {
        let content: Vec<serde_json::Value> = req
            .messages
            .iter()
            .map(|part| match part {
                MessagePart::Text(text) => json!({ "type": "text", "text": text }),
                MessagePart::Image(img) => {
                    let url = match &img.content {
                        ImageContent::Base64(data) => {
                            format!("data:{};base64,{data}", img.media_type)
                        }
                        ImageContent::Url(url) => url.clone(),
                    };
                    json!({ "type": "image_url", "image_url": { "url": url } })
                }
            })
            .collect();
        json!({
            "model": req.model_id,
            "messages": [{ "role": "user", "content": content }],
            "temperature": req.decoding.temperature,
            "max_tokens": req.decoding.max_output_tokens,
        })
    }
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        "http"
    }

    fn complete(&self, req: &ModelRequest) -> std::result::Result<BackendReply, BackendError> {
        let started = Instant::now();
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&Self::request_body(req))
            .send()
            .map_err(|e| BackendError::Transient(format!("transport: {e}")))?;
        let status = response.status();
        if status.as_u16() == 429 || status.as_u16() == 408 || status.is_server_error() {
            return Err(BackendError::Transient(format!("status {status}")));
        }
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(BackendError::Unavailable(format!("status {status}: check credentials")));
        }
        if !status.is_success() {
            return Err(BackendError::Protocol(format!("status {status}")));
        }
        let body: serde_json::Value = response
            .json()
            .map_err(|e| BackendError::Protocol(format!("invalid json body: {e}")))?;
        let text = body["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| {
                BackendError::Protocol("missing choices[0].message.content".to_string())
            })?
            .to_string();
        let usage = body.get("usage").and_then(|u| {
            Some(TokenUsage {
                prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
                completion_tokens: u.get("completion_tokens")?.as_u64()?,
            })
        });
        Ok(BackendReply { text, usage, latency_s: started.elapsed().as_secs_f64() })
    }
}
