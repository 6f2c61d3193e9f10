//! Uniform client for text and vision chat-completion endpoints.
//!
//! A [`Gateway`] either talks to a live endpoint, serves recorded responses
//! from a fixture file keyed by [`request_digest`], or does both (recording:
//! misses go live and are appended to the fixture). Usage is accumulated per
//! session and is safe to share across threads.

pub(crate) mod digest;
mod fixture;
mod http;
mod limiter;
mod types;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use thiserror::Error;

pub use digest::{canonical_form, request_digest};
pub use fixture::{FixtureError, FixtureRecord, FixtureStore};
pub use http::{
    completions_url, parse_completion, request_body, HttpReply, HttpTransport, RetryPolicy,
    Transport,
};
pub use limiter::RateLimiter;
pub use types::{
    estimate_cost, ChatRequest, ChatResponse, MediaType, Message, Part, PriceTable, RequestError,
    Role, Usage,
};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(#[from] RequestError),
    #[error("auth token variable {0} is unset or empty")]
    MissingToken(String),
    #[error("transport failed after {attempts} attempts: {last}")]
    RetryExhausted { attempts: u32, last: String },
    #[error("rate limited (HTTP 429) on all {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("no fixture entry for request digest {digest}")]
    FixtureMiss { digest: String },
    #[error(transparent)]
    Fixture(#[from] FixtureError),
    #[error("model output truncated before any text was produced")]
    Truncated,
    #[error("model returned empty text")]
    EmptyResponse,
    #[error("malformed completion: {0}")]
    Malformed(String),
}

impl GatewayError {
    /// The backend could not be reached or configured at all.
    pub fn is_unavailable(&self) -> bool {
        matches!(
            self,
            GatewayError::MissingToken(_)
                | GatewayError::RetryExhausted { .. }
                | GatewayError::Fixture(_)
        )
    }
}

/// Where responses come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Backend {
    Live {
        endpoint_url: String,
        /// Name of the environment variable holding the bearer token.
        auth_token_env: String,
    },
    Replay {
        fixture_path: PathBuf,
        strict: bool,
    },
}

#[derive(Debug, Clone)]
pub struct GatewayOptions {
    pub model_name: String,
    pub rate_limit_rpm: u32,
    pub retry: RetryPolicy,
    pub prices: PriceTable,
    pub timeout: Duration,
}

impl Default for GatewayOptions {
    fn default() -> Self {
        Self {
            model_name: "gpt-4o-mini".into(),
            rate_limit_rpm: 60,
            retry: RetryPolicy::default(),
            prices: PriceTable::ZERO,
            timeout: Duration::from_secs(120),
        }
    }
}

type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

pub struct Gateway {
    model_name: String,
    fixtures: Option<FixtureStore>,
    strict: bool,
    transport: Option<Box<dyn Transport>>,
    limiter: Option<RateLimiter>,
    retry: RetryPolicy,
    sleeper: Sleeper,
    prices: PriceTable,
    usage: Mutex<Usage>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("model_name", &self.model_name)
            .field("replay", &self.fixtures.is_some())
            .field("live", &self.transport.is_some())
            .field("strict", &self.strict)
            .finish()
    }
}

impl Gateway {
    fn base(model_name: String, opts: &GatewayOptions) -> Self {
        Self {
            model_name,
            fixtures: None,
            strict: true,
            transport: None,
            limiter: None,
            retry: opts.retry,
            sleeper: Arc::new(std::thread::sleep),
            prices: opts.prices,
            usage: Mutex::new(Usage::default()),
        }
    }

    /// Builds a gateway for `backend`. Live backends read the token from the
    /// named environment variable.
    pub fn connect(backend: &Backend, opts: &GatewayOptions) -> Result<Self, GatewayError> {
        match backend {
            Backend::Live {
                endpoint_url,
                auth_token_env,
            } => {
                let transport = live_transport(endpoint_url, auth_token_env, opts)?;
                Ok(Self::with_transport(transport, opts))
            }
            Backend::Replay {
                fixture_path,
                strict,
            } => {
                let store = FixtureStore::load(fixture_path)?;
                let mut g = Self::replay(store, opts);
                g.strict = *strict;
                Ok(g)
            }
        }
    }

    /// Strict replay from an in-memory or loaded store.
    pub fn replay(store: FixtureStore, opts: &GatewayOptions) -> Self {
        let mut g = Self::base(opts.model_name.clone(), opts);
        g.fixtures = Some(store);
        g
    }

    pub fn with_transport(transport: Box<dyn Transport>, opts: &GatewayOptions) -> Self {
        let mut g = Self::base(opts.model_name.clone(), opts);
        g.transport = Some(transport);
        g.limiter = Some(RateLimiter::per_minute(opts.rate_limit_rpm));
        g
    }

    /// Serves hits from `fixture_path` and sends misses through `transport`,
    /// appending each new response to the fixture.
    pub fn recording(
        transport: Box<dyn Transport>,
        fixture_path: &std::path::Path,
        opts: &GatewayOptions,
    ) -> Result<Self, GatewayError> {
        let mut g = Self::with_transport(transport, opts);
        g.fixtures = Some(FixtureStore::open_for_recording(fixture_path)?);
        g.strict = false;
        Ok(g)
    }

    /// Replaces the sleep used between retries and by the limiter's callers.
    pub fn with_sleeper(mut self, sleeper: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleeper = Arc::new(sleeper);
        self
    }

    /// Attaches a live fallback to a non-strict replay gateway.
    pub fn with_fallback(mut self, transport: Box<dyn Transport>, rpm: u32) -> Self {
        self.transport = Some(transport);
        self.limiter = Some(RateLimiter::per_minute(rpm));
        self
    }

    pub fn set_strict(&mut self, strict: bool) {
        self.strict = strict;
    }

    pub fn model_name(&self) -> &str {
        &self.model_name
    }

    pub fn is_replay(&self) -> bool {
        self.fixtures.is_some()
    }

    pub fn usage(&self) -> Usage {
        *self.usage.lock()
    }

    pub fn prices(&self) -> PriceTable {
        self.prices
    }

    pub fn send_chat(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let digest = request_digest(request);
        if let Some(store) = &self.fixtures {
            if let Some(rec) = store.get(&digest) {
                let resp = ChatResponse {
                    text: rec.response_text.trim_end().to_string(),
                    input_tokens: rec.input_tokens,
                    output_tokens: rec.output_tokens,
                    latency: Duration::ZERO,
                };
                if resp.text.is_empty() {
                    return Err(GatewayError::EmptyResponse);
                }
                self.usage.lock().record(&resp, &self.prices);
                return Ok(resp);
            }
            if self.strict || self.transport.is_none() {
                return Err(GatewayError::FixtureMiss { digest });
            }
        }
        let resp = self.send_live(request)?;
        if let Some(store) = &self.fixtures {
            store.append(&FixtureRecord {
                digest,
                response_text: resp.text.clone(),
                input_tokens: resp.input_tokens,
                output_tokens: resp.output_tokens,
            })?;
        }
        self.usage.lock().record(&resp, &self.prices);
        Ok(resp)
    }

    fn send_live(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let transport = self
            .transport
            .as_ref()
            .ok_or_else(|| GatewayError::RetryExhausted {
                attempts: 0,
                last: "no live transport configured".into(),
            })?;
        let body = request_body(request);
        let max = self.retry.max_attempts.clamp(1, RetryPolicy::MAX_ATTEMPTS);
        let mut last = String::new();
        let mut all_429 = true;
        for attempt in 1..=max {
            if let Some(limiter) = &self.limiter {
                while let Err(wait) = limiter.try_acquire() {
                    (self.sleeper)(wait);
                }
            }
            let started = Instant::now();
            match transport.post_json(&body) {
                Ok(reply) if (200..300).contains(&reply.status) => {
                    let parsed = parse_completion(&reply.body).map_err(GatewayError::Malformed)?;
                    let text = parsed.text.trim_end().to_string();
                    if text.is_empty() {
                        return Err(if parsed.finish_reason.as_deref() == Some("length") {
                            GatewayError::Truncated
                        } else {
                            GatewayError::EmptyResponse
                        });
                    }
                    return Ok(ChatResponse {
                        text,
                        input_tokens: parsed.input_tokens,
                        output_tokens: parsed.output_tokens,
                        latency: started.elapsed(),
                    });
                }
                Ok(reply) if reply.status == 429 => {
                    last = format!("HTTP 429: {}", reply.body);
                }
                Ok(reply) if reply.status >= 500 => {
                    all_429 = false;
                    last = format!("HTTP {}: {}", reply.status, reply.body);
                }
                Ok(reply) => {
                    return Err(GatewayError::Http {
                        status: reply.status,
                        body: reply.body,
                    })
                }
                Err(e) => {
                    all_429 = false;
                    last = e;
                }
            }
            if attempt < max {
                log::warn!("attempt {attempt}/{max} failed: {last}");
                (self.sleeper)(self.retry.delay_after(attempt));
            }
        }
        if all_429 {
            Err(GatewayError::RateLimited { attempts: max })
        } else {
            Err(GatewayError::RetryExhausted {
                attempts: max,
                last,
            })
        }
    }
}

fn live_transport(
    endpoint_url: &str,
    auth_token_env: &str,
    opts: &GatewayOptions,
) -> Result<Box<dyn Transport>, GatewayError> {
    let token = std::env::var(auth_token_env)
        .ok()
        .filter(|t| !t.trim().is_empty())
        .ok_or_else(|| GatewayError::MissingToken(auth_token_env.to_string()))?;
    let t = HttpTransport::new(endpoint_url, token, opts.timeout).map_err(|last| {
        GatewayError::RetryExhausted { attempts: 0, last }
    })?;
    Ok(Box::new(t))
}

/// Live transport for an endpoint, used to attach recording or fallback.
pub fn connect_live(
    endpoint_url: &str,
    auth_token_env: &str,
    opts: &GatewayOptions,
) -> Result<Box<dyn Transport>, GatewayError> {
    live_transport(endpoint_url, auth_token_env, opts)
}
