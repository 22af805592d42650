use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{GatewayError, TransportError};
use crate::request::ChatRequest;

/// Something that turns a request into completion text, once.
///
/// Retries and caching live in [`crate::Gateway`]; transports report whether a
/// failure is worth retrying.
pub trait Transport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError>;

    /// Whether a call reaches the network. Mock transports return false.
    fn is_network(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpTransportConfig {
    /// Full URL of the chat-completions route, e.g.
    /// `http://localhost:8000/v1/chat/completions`.
    pub url: String,
    /// Environment variable holding the bearer token, if the endpoint needs one.
    pub api_key_env: Option<String>,
    pub timeout: Duration,
}

impl HttpTransportConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            api_key_env: None,
            timeout: Duration::from_secs(120),
        }
    }
}

/// OpenAI-compatible `POST .../chat/completions` client.
pub struct HttpTransport {
    url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    content: Option<String>,
}

impl HttpTransport {
    pub fn new(config: HttpTransportConfig) -> Result<Self, GatewayError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                GatewayError::InvalidRequest(format!("credential variable {var} is not set"))
            })?),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            url: config.url,
            api_key,
            agent,
        })
    }
}

pub(crate) fn wire_body(request: &ChatRequest) -> serde_json::Value {
    let mut messages = Vec::with_capacity(2);
    if let Some(system) = &request.system {
        messages.push(WireMessage {
            role: "system",
            content: system,
        });
    }
    messages.push(WireMessage {
        role: "user",
        content: &request.user,
    });
    serde_json::to_value(WireRequest {
        model: &request.model,
        messages,
        temperature: request.temperature,
        max_tokens: request.max_tokens,
    })
    .expect("wire request serializes")
}

pub(crate) fn first_choice_text(body: &str) -> Result<String, GatewayError> {
    let parsed: WireResponse =
        serde_json::from_str(body).map_err(|e| GatewayError::Malformed(e.to_string()))?;
    parsed
        .choices
        .into_iter()
        .next()
        .map(|c| c.message.content.unwrap_or_default())
        .ok_or_else(|| GatewayError::Malformed("response has no choices".into()))
}

impl Transport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let mut call = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = call
            .send_json(wire_body(request))
            .map_err(|e| TransportError::Retryable(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Retryable(e.to_string()))?;
        match status {
            200..=299 => first_choice_text(&body).map_err(TransportError::Fatal),
            429 | 500..=599 => Err(TransportError::Retryable(format!("status {status}: {body}"))),
            _ => Err(TransportError::Fatal(GatewayError::Status { status, body })),
        }
    }
}
