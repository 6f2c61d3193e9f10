//! Chat-completions wire format and the blocking HTTP transport.

use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::types::{ChatRequest, Part};

/// Raw HTTP exchange result.
#[derive(Debug, Clone)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

/// One POST of a chat-completions body. `Err` means the exchange never
/// produced an HTTP status (connect failure, timeout, reset).
pub trait Transport: Send + Sync {
    fn post_json(&self, body: &Value) -> Result<HttpReply, String>;
}

impl<F> Transport for F
where
    F: Fn(&Value) -> Result<HttpReply, String> + Send + Sync,
{
    fn post_json(&self, body: &Value) -> Result<HttpReply, String> {
        self(body)
    }
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
    url: String,
    token: String,
}

impl HttpTransport {
    pub fn new(endpoint_url: &str, token: String, timeout: Duration) -> Result<Self, String> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| e.to_string())?;
        Ok(Self {
            client,
            url: completions_url(endpoint_url),
            token,
        })
    }
}

impl Transport for HttpTransport {
    fn post_json(&self, body: &Value) -> Result<HttpReply, String> {
        let resp = self
            .client
            .post(&self.url)
            .bearer_auth(&self.token)
            .json(body)
            .send()
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| e.to_string())?;
        Ok(HttpReply { status, body })
    }
}

/// Accepts either a server root or a full `/chat/completions` URL.
pub fn completions_url(endpoint: &str) -> String {
    let base = endpoint.trim_end_matches('/');
    if base.ends_with("/chat/completions") {
        base.to_string()
    } else if base.ends_with("/v1") {
        format!("{base}/chat/completions")
    } else {
        format!("{base}/v1/chat/completions")
    }
}

/// Request body: `model`, `messages`, `temperature`, `max_tokens`. Images go
/// out as base64 data URLs.
pub fn request_body(request: &ChatRequest) -> Value {
    let engine = base64::engine::general_purpose::STANDARD;
    let messages: Vec<Value> = request
        .messages
        .iter()
        .map(|m| {
            let text_only = m.parts.iter().all(|p| matches!(p, Part::Text(_)));
            let content = if text_only {
                Value::String(m.text())
            } else {
                Value::Array(
                    m.parts
                        .iter()
                        .map(|p| match p {
                            Part::Text(t) => json!({ "type": "text", "text": t }),
                            Part::Image { bytes, media_type } => json!({
                                "type": "image_url",
                                "image_url": {
                                    "url": format!("data:{};base64,{}", media_type.mime(), engine.encode(bytes))
                                }
                            }),
                        })
                        .collect(),
                )
            };
            json!({ "role": m.role.as_str(), "content": content })
        })
        .collect();
    json!({
        "model": request.model_name,
        "messages": messages,
        "temperature": request.temperature,
        "max_tokens": request.max_output_tokens,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedCompletion {
    pub text: String,
    pub finish_reason: Option<String>,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

pub fn parse_completion(body: &str) -> Result<ParsedCompletion, String> {
    let v: Value = serde_json::from_str(body).map_err(|e| format!("response is not JSON: {e}"))?;
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or("response has no choices")?;
    let content = choice.get("message").and_then(|m| m.get("content"));
    let text = match content {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Array(parts)) => parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join(""),
        Some(Value::Null) | None => String::new(),
        Some(other) => return Err(format!("unexpected content type: {other}")),
    };
    let usage = v.get("usage");
    let tok = |k: &str| usage.and_then(|u| u.get(k)).and_then(Value::as_u64).unwrap_or(0);
    Ok(ParsedCompletion {
        text,
        finish_reason: choice
            .get("finish_reason")
            .and_then(Value::as_str)
            .map(str::to_string),
        input_tokens: tok("prompt_tokens"),
        output_tokens: tok("completion_tokens"),
    })
}

/// Exponential backoff: attempt `k` (1-based) waits `base * factor^(k-1)`
/// before attempt `k + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: f64,
}

impl RetryPolicy {
    pub const MAX_ATTEMPTS: u32 = 5;

    pub fn delay_after(&self, attempt: u32) -> Duration {
        self.base_delay
            .mul_f64(self.factor.powi(attempt.saturating_sub(1) as i32))
    }
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: Self::MAX_ATTEMPTS,
            base_delay: Duration::from_secs(1),
            factor: 2.0,
        }
    }
}
