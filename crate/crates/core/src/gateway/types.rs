use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediaType {
    Png,
    Jpeg,
}

impl MediaType {
    pub fn mime(self) -> &'static str {
        match self {
            MediaType::Png => "image/png",
            MediaType::Jpeg => "image/jpeg",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Part {
    Text(String),
    Image { bytes: Vec<u8>, media_type: MediaType },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub role: Role,
    pub parts: Vec<Part>,
}

impl Message {
    pub fn system(text: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            parts: vec![Part::Text(text.into())],
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            parts: vec![Part::Text(text.into())],
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            parts: vec![Part::Text(text.into())],
        }
    }

    /// A user message with the text first, then the image.
    pub fn user_with_image(text: impl Into<String>, bytes: Vec<u8>, media_type: MediaType) -> Self {
        Self {
            role: Role::User,
            parts: vec![Part::Text(text.into()), Part::Image { bytes, media_type }],
        }
    }

    /// Concatenation of all text parts.
    pub fn text(&self) -> String {
        self.parts
            .iter()
            .filter_map(|p| match p {
                Part::Text(t) => Some(t.as_str()),
                Part::Image { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RequestError {
    #[error("request has no messages")]
    NoMessages,
    #[error("system message must be the first and only system message")]
    MisplacedSystem,
    #[error("message {0} has no parts")]
    EmptyMessage(usize),
    #[error("message {0} carries an image but is not a user message")]
    ImageOutsideUser(usize),
    #[error("temperature {0} outside [0, 2]")]
    Temperature(f64),
    #[error("max_output_tokens must be positive")]
    MaxTokens,
    #[error("model name is empty")]
    NoModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model_name: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 1024;

    /// Temperature 0, default output budget.
    pub fn new(model_name: impl Into<String>, messages: Vec<Message>) -> Self {
        Self {
            model_name: model_name.into(),
            messages,
            temperature: 0.0,
            max_output_tokens: Self::DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }

    pub fn with_max_output_tokens(mut self, n: u32) -> Self {
        self.max_output_tokens = n;
        self
    }

    pub fn validate(&self) -> Result<(), RequestError> {
        if self.model_name.trim().is_empty() {
            return Err(RequestError::NoModel);
        }
        if self.messages.is_empty() {
            return Err(RequestError::NoMessages);
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(RequestError::Temperature(self.temperature));
        }
        if self.max_output_tokens == 0 {
            return Err(RequestError::MaxTokens);
        }
        for (i, m) in self.messages.iter().enumerate() {
            if m.role == Role::System && i != 0 {
                return Err(RequestError::MisplacedSystem);
            }
            if m.parts.is_empty() {
                return Err(RequestError::EmptyMessage(i));
            }
            let has_image = m.parts.iter().any(|p| matches!(p, Part::Image { .. }));
            if has_image && m.role != Role::User {
                return Err(RequestError::ImageOutsideUser(i));
            }
        }
        Ok(())
    }

    /// Every message as a `[role]` block; what a prompt log shows.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| format!("[{}]\n{}", m.role.as_str(), m.text()))
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub latency: Duration,
}

/// Per-token prices in currency units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceTable {
    pub input_per_token: f64,
    pub output_per_token: f64,
}

impl PriceTable {
    pub const ZERO: PriceTable = PriceTable {
        input_per_token: 0.0,
        output_per_token: 0.0,
    };
}

impl Default for PriceTable {
    fn default() -> Self {
        Self::ZERO
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Usage {
    pub requests: u64,
    pub total_input_tokens: u64,
    pub total_output_tokens: u64,
    pub estimated_cost: f64,
    #[serde(with = "duration_secs")]
    pub wall_time: Duration,
}

impl Usage {
    pub fn record(&mut self, response: &ChatResponse, prices: &PriceTable) {
        self.requests += 1;
        self.total_input_tokens += response.input_tokens;
        self.total_output_tokens += response.output_tokens;
        self.estimated_cost += estimate_tokens_cost(response.input_tokens, response.output_tokens, prices);
        self.wall_time += response.latency;
    }
}

impl std::ops::Add for Usage {
    type Output = Usage;

    fn add(self, rhs: Usage) -> Usage {
        Usage {
            requests: self.requests + rhs.requests,
            total_input_tokens: self.total_input_tokens + rhs.total_input_tokens,
            total_output_tokens: self.total_output_tokens + rhs.total_output_tokens,
            estimated_cost: self.estimated_cost + rhs.estimated_cost,
            wall_time: self.wall_time + rhs.wall_time,
        }
    }
}

fn estimate_tokens_cost(input: u64, output: u64, prices: &PriceTable) -> f64 {
    input as f64 * prices.input_per_token + output as f64 * prices.output_per_token
}

/// `input_tokens * rate_in + output_tokens * rate_out`.
pub fn estimate_cost(usage: &Usage, prices: &PriceTable) -> f64 {
    estimate_tokens_cost(usage.total_input_tokens, usage.total_output_tokens, prices)
}

mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Ok(Duration::from_secs_f64(secs.max(0.0)))
    }
}
