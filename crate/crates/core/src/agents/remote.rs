//! Client for a chat-completions style multimodal model server.
//!
//! Request body (one JSON document per POST):
//!
//! ```json
//! {
//!   "model": "<model id>",
//!   "messages": [
//!     {"role": "user", "content": [
//!       {"type": "text", "text": "<prompt>"},
//!       {"type": "image_url", "image_url": {"url": "data:image/png;base64,<...>"}}
//!     ]}
//!   ],
//!   "temperature": 0.0,
//!   "max_tokens": 256,
//!   "logprobs": false
//! }
//! ```
//!
//! Response body: `choices[0].message.content` holds the completion text.
//! `choices[0].logprobs.content[*].logprob` is read when present. Extra
//! fields are ignored.

use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::protocol::{Observation, Policy, PolicyError, Reply};
use crate::tools::{encode_png, Image};

#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("transport error after {attempts} attempt(s): {detail}")]
    Transport { attempts: u32, detail: String },
    #[error("server answered HTTP {code}: {body}")]
    Status { code: u16, body: String },
    #[error("malformed response body: {0}")]
    MalformedBody(String),
    #[error("could not encode request: {0}")]
    Encode(String),
}

impl RemoteError {
    /// Stable short code for logs and reports.
    pub fn code(&self) -> &'static str {
        match self {
            RemoteError::Transport { .. } => "transport",
            RemoteError::Status { .. } => "http_status",
            RemoteError::MalformedBody(_) => "malformed_body",
            RemoteError::Encode(_) => "encode",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChatPart {
    Text(String),
    /// Raw PNG bytes; base64-encoded on the wire.
    Png(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatMessage {
    pub role: String,
    pub parts: Vec<ChatPart>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    /// A single user turn holding the prompt and one screenshot.
    pub fn for_stage(
        model: &str,
        prompt: &str,
        image: &Image,
        temperature: f64,
        max_tokens: u32,
    ) -> Result<Self, RemoteError> {
        let png = encode_png(image).map_err(|e| RemoteError::Encode(e.to_string()))?;
        Ok(Self {
            model: model.to_owned(),
            messages: vec![ChatMessage {
                role: "user".into(),
                parts: vec![ChatPart::Text(prompt.to_owned()), ChatPart::Png(png)],
            }],
            temperature,
            max_tokens,
        })
    }

    pub fn to_json(&self) -> Value {
        let messages: Vec<Value> = self
            .messages
            .iter()
            .map(|m| {
                let content: Vec<Value> = m
                    .parts
                    .iter()
                    .map(|p| match p {
                        ChatPart::Text(t) => json!({"type": "text", "text": t}),
                        ChatPart::Png(bytes) => json!({
                            "type": "image_url",
                            "image_url": {"url": format!("data:image/png;base64,{}", BASE64.encode(bytes))}
                        }),
                    })
                    .collect();
                json!({"role": m.role, "content": content})
            })
            .collect();
        json!({
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "logprobs": false,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatResponse {
    pub text: String,
    pub logprobs: Option<Vec<f64>>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    logprobs: Option<WireLogprobs>,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireLogprobs {
    #[serde(default)]
    content: Vec<WireToken>,
}

#[derive(Deserialize)]
struct WireToken {
    logprob: f64,
}

pub fn parse_response(body: &str) -> Result<ChatResponse, RemoteError> {
    let wire: WireResponse =
        serde_json::from_str(body).map_err(|e| RemoteError::MalformedBody(e.to_string()))?;
    let choice = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| RemoteError::MalformedBody("no choices".into()))?;
    let text = choice
        .message
        .content
        .ok_or_else(|| RemoteError::MalformedBody("choice has no text content".into()))?;
    Ok(ChatResponse {
        text,
        logprobs: choice
            .logprobs
            .map(|l| l.content.into_iter().map(|t| t.logprob).collect()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout: Duration,
    /// Extra attempts after the first on transport failure or HTTP 5xx.
    pub retries: u32,
    pub temperature: f64,
    pub max_tokens: u32,
    pub api_key: Option<String>,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            timeout: Duration::from_secs(60),
            retries: 2,
            temperature: 0.0,
            max_tokens: 256,
            api_key: None,
        }
    }
}

/// Sends `req` and returns the completion. Holds no state between calls.
pub fn remote_complete(cfg: &RemoteConfig, req: &ChatRequest) -> Result<ChatResponse, RemoteError> {
    let client = reqwest::blocking::Client::builder()
        .timeout(cfg.timeout)
        .build()
        .map_err(|e| RemoteError::Transport {
            attempts: 0,
            detail: e.to_string(),
        })?;
    let body = serde_json::to_vec(&req.to_json()).map_err(|e| RemoteError::Encode(e.to_string()))?;
    let attempts = cfg.retries + 1;
    let mut last = None;
    for attempt in 1..=attempts {
        let mut builder = client
            .post(&cfg.endpoint)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.clone());
        if let Some(key) = &cfg.api_key {
            builder = builder.bearer_auth(key);
        }
        match builder.send() {
            Err(e) => {
                last = Some(RemoteError::Transport {
                    attempts: attempt,
                    detail: e.to_string(),
                })
            }
            Ok(resp) => {
                let code = resp.status();
                let text = resp.text().map_err(|e| RemoteError::Transport {
                    attempts: attempt,
                    detail: e.to_string(),
                });
                let text = match text {
                    Ok(t) => t,
                    Err(e) => {
                        last = Some(e);
                        continue;
                    }
                };
                if code.is_success() {
                    return parse_response(&text);
                }
                let err = RemoteError::Status {
                    code: code.as_u16(),
                    body: text,
                };
                if !code.is_server_error() {
                    return Err(err);
                }
                last = Some(err);
            }
        }
    }
    Err(last.expect("at least one attempt is made"))
}

/// A policy backed by [`remote_complete`]; evaluation only.
#[derive(Debug, Clone)]
pub struct RemotePolicy {
    pub config: RemoteConfig,
}

impl RemotePolicy {
    pub fn new(config: RemoteConfig) -> Self {
        Self { config }
    }
}

impl Policy for RemotePolicy {
    type Trace = Option<Vec<f64>>;

    fn respond(
        &self,
        obs: &Observation<'_>,
        _rng: &mut ChaCha8Rng,
    ) -> Result<Reply<Self::Trace>, PolicyError> {
        let req = ChatRequest::for_stage(
            &self.config.model,
            obs.prompt,
            obs.image,
            self.config.temperature,
            self.config.max_tokens,
        )
        .map_err(PolicyError::new)?;
        let resp = remote_complete(&self.config, &req).map_err(PolicyError::new)?;
        Ok(Reply {
            text: resp.text,
            trace: resp.logprobs,
        })
    }
}
