//! Inference endpoint contract, the HTTP adapter, and scripted mocks.
//!
//! Everything that talks to a model goes through [`InferenceClient`]. The
//! HTTP client delegates the wire format to a [`WireDialect`], so supporting
//! another server means adding a dialect, not touching callers.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::attrgen::{ChatRequest, Segment};
use crate::corpus::read_jsonl;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EndpointError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("server returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("cannot decode response: {0}")]
    Decode(String),
    #[error("cannot encode request: {0}")]
    Encode(String),
    #[error("mock script has no response for {0:?}")]
    Exhausted(String),
}

impl EndpointError {
    /// Transport hiccups and 5xx/429 responses are worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            EndpointError::Transport(_) => true,
            EndpointError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait InferenceClient: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, req: &ChatRequest) -> Result<String, EndpointError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            backoff_ms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    /// Calls made, including the successful one.
    pub attempts: u32,
    pub latency: Duration,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{error} (after {attempts} attempt(s))")]
pub struct CallFailure {
    pub error: EndpointError,
    pub attempts: u32,
}

/// Calls `client`, retrying retryable failures with linear backoff.
pub fn complete_with_retry(
    client: &dyn InferenceClient,
    req: &ChatRequest,
    policy: &RetryPolicy,
) -> Result<Completion, CallFailure> {
    let start = Instant::now();
    let mut attempts = 0;
    loop {
        attempts += 1;
        match client.complete(req) {
            Ok(text) => {
                return Ok(Completion {
                    text,
                    attempts,
                    latency: start.elapsed(),
                })
            }
            Err(e) if e.is_retryable() && attempts <= policy.max_retries => {
                tracing::warn!(
                    request = %req.request_id,
                    attempt = attempts,
                    error = %e,
                    "endpoint call failed, retrying"
                );
                if policy.backoff_ms > 0 {
                    thread::sleep(Duration::from_millis(policy.backoff_ms * attempts as u64));
                }
            }
            Err(error) => return Err(CallFailure { error, attempts }),
        }
    }
}

/// Encodes a [`ChatRequest`] for one server family and decodes its reply.
pub trait WireDialect: Send + Sync {
    fn encode(&self, req: &ChatRequest, model: &str) -> Result<Value, EndpointError>;
    fn decode(&self, body: &Value) -> Result<String, EndpointError>;
}

/// OpenAI-style `/chat/completions` with base64 data-URL images.
#[derive(Debug, Clone, Copy, Default)]
pub struct OpenAiChat;

fn mime_for(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("jpg") | Some("jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        _ => "image/png",
    }
}

impl WireDialect for OpenAiChat {
    fn encode(&self, req: &ChatRequest, model: &str) -> Result<Value, EndpointError> {
        let mut parts = Vec::with_capacity(req.user.len());
        for seg in &req.user {
            match seg {
                Segment::Text { text } => parts.push(json!({"type": "text", "text": text})),
                Segment::Image(img) => {
                    let bytes = fs::read(&img.path).map_err(|e| {
                        EndpointError::Encode(format!("{}: {e}", img.path.display()))
                    })?;
                    let b64 = base64::engine::general_purpose::STANDARD.encode(bytes);
                    let url = format!("data:{};base64,{b64}", mime_for(&img.path));
                    parts.push(json!({"type": "image_url", "image_url": {"url": url}}));
                }
            }
        }
        Ok(json!({
            "model": model,
            "messages": [
                {"role": "system", "content": req.system},
                {"role": "user", "content": parts},
            ],
            "temperature": req.decoding.temperature,
            "max_tokens": req.decoding.max_tokens,
        }))
    }

    fn decode(&self, body: &Value) -> Result<String, EndpointError> {
        body.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| EndpointError::Decode(format!("no choices[0].message.content in {body}")))
    }
}

pub struct HttpClient {
    url: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    dialect: Box<dyn WireDialect>,
}

impl HttpClient {
    pub fn new(url: impl Into<String>, model: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url: url.into(),
            model: model.into(),
            api_key: None,
            agent,
            dialect: Box::new(OpenAiChat),
        }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn with_dialect(mut self, dialect: Box<dyn WireDialect>) -> Self {
        self.dialect = dialect;
        self
    }
}

impl InferenceClient for HttpClient {
    fn name(&self) -> &str {
        "http"
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, EndpointError> {
        let body = self.dialect.encode(req, &self.model)?;
        let mut call = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call
            .send_json(&body)
            .map_err(|e| EndpointError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| EndpointError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(EndpointError::Status { status, body: text });
        }
        let value: Value =
            serde_json::from_str(&text).map_err(|e| EndpointError::Decode(e.to_string()))?;
        self.dialect.decode(&value)
    }
}

/// One line of a mock script: a response or a simulated transport error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptLine {
    pub request_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Replays canned responses per request id, in order. The last response for
/// an id repeats once its queue is drained; errors are consumed.
#[derive(Debug, Default)]
pub struct ScriptedClient {
    queues: Mutex<HashMap<String, VecDeque<Result<String, String>>>>,
    fallback: Option<String>,
}

impl ScriptedClient {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn respond(self, request_id: impl Into<String>, text: impl Into<String>) -> Self {
        self.push(request_id.into(), Ok(text.into()));
        self
    }

    pub fn fail(self, request_id: impl Into<String>, message: impl Into<String>) -> Self {
        self.push(request_id.into(), Err(message.into()));
        self
    }

    /// Response for any request id without a script entry.
    pub fn with_fallback(mut self, text: impl Into<String>) -> Self {
        self.fallback = Some(text.into());
        self
    }

    fn push(&self, id: String, item: Result<String, String>) {
        self.queues
            .lock()
            .expect("mock lock")
            .entry(id)
            .or_default()
            .push_back(item);
    }

    pub fn from_lines(lines: impl IntoIterator<Item = ScriptLine>) -> Self {
        let client = Self::new();
        for l in lines {
            let item = match (l.response, l.error) {
                (_, Some(err)) => Err(err),
                (Some(text), None) => Ok(text),
                (None, None) => Ok(String::new()),
            };
            client.push(l.request_id, item);
        }
        client
    }

    pub fn load(path: &Path) -> Result<Self, crate::corpus::DatasetError> {
        Ok(Self::from_lines(read_jsonl::<ScriptLine>(path)?))
    }
}

impl InferenceClient for ScriptedClient {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, EndpointError> {
        let mut queues = self.queues.lock().expect("mock lock");
        let Some(queue) = queues.get_mut(&req.request_id) else {
            return self
                .fallback
                .clone()
                .ok_or_else(|| EndpointError::Exhausted(req.request_id.clone()));
        };
        let item = if queue.len() > 1 {
            queue.pop_front()
        } else {
            match queue.front() {
                Some(Err(_)) => queue.pop_front(),
                other => other.cloned(),
            }
        };
        match item {
            Some(Ok(text)) => Ok(text),
            Some(Err(msg)) => Err(EndpointError::Transport(msg)),
            None => self
                .fallback
                .clone()
                .ok_or_else(|| EndpointError::Exhausted(req.request_id.clone())),
        }
    }
}

/// Adapts a closure into a client.
pub struct FnClient<F>(pub F);

impl<F> InferenceClient for FnClient<F>
where
    F: Fn(&ChatRequest) -> Result<String, EndpointError> + Send + Sync,
{
    fn name(&self) -> &str {
        "fn"
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, EndpointError> {
        (self.0)(req)
    }
}
