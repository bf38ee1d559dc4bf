//! Chat-completion transports.
//!
//! The harness speaks one request/response shape ([`ChatRequest`],
//! [`ChatResponse`]); adapters translate it for each provider. Retrying and
//! rate limiting are wrappers around any transport, and the mock transports
//! let the whole protocol run without a network.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::chat::{ChatMessage, FunctionCall, Role, ToolCall};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub tools: Vec<Value>,
    pub temperature: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl std::ops::AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: Self) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.completion_tokens += rhs.completion_tokens;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub message: ChatMessage,
    pub usage: TokenUsage,
}

impl ChatResponse {
    pub fn text(content: impl Into<String>) -> Self {
        ChatResponse { message: ChatMessage::assistant(content), usage: TokenUsage::default() }
    }

    pub fn tool_call(id: impl Into<String>, name: &str, arguments: Value) -> Self {
        ChatResponse {
            message: ChatMessage::assistant_tool_calls(None, vec![ToolCall::new(id, name, arguments)]),
            usage: TokenUsage::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransportError {
    #[error("network error: {0}")]
    Network(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("context length exceeded: {0}")]
    ContextLength(String),
    #[error("malformed response: {0}")]
    Decode(String),
    #[error("missing configuration: {0}")]
    Config(String),
    #[error("scripted transport has no responses left")]
    Exhausted,
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: usize, last: Box<TransportError> },
}

impl TransportError {
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportError::Network(_) => true,
            TransportError::Http { status, .. } => *status == 408 || *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait ChatTransport: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, TransportError>;
}

impl<T: ChatTransport + ?Sized> ChatTransport for Arc<T> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, TransportError> {
        (**self).complete(request)
    }
}

impl<T: ChatTransport + ?Sized> ChatTransport for Box<T> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, TransportError> {
        (**self).complete(request)
    }
}

fn classify_http(status: u16, body: String) -> TransportError {
    let lower = body.to_lowercase();
    if status == 400 && (lower.contains("context_length") || lower.contains("context length") || lower.contains("too long"))
    {
        TransportError::ContextLength(body)
    } else {
        TransportError::Http { status, body }
    }
}

fn http_client(timeout: Duration) -> Result<reqwest::blocking::Client, TransportError> {
    reqwest::blocking::Client::builder().timeout(timeout).build().map_err(|e| TransportError::Network(e.to_string()))
}

fn post_json(
    client: &reqwest::blocking::Client,
    url: &str,
    headers: &[(&str, String)],
    body: &Value,
) -> Result<Value, TransportError> {
    let mut req = client.post(url).json(body);
    for (k, v) in headers {
        req = req.header(*k, v);
    }
    let resp = req.send().map_err(|e| TransportError::Network(e.to_string()))?;
    let status = resp.status().as_u16();
    let text = resp.text().map_err(|e| TransportError::Network(e.to_string()))?;
    if !(200..300).contains(&status) {
        return Err(classify_http(status, text));
    }
    serde_json::from_str(&text).map_err(|e| TransportError::Decode(format!("{e}: {text}")))
}

/// OpenAI-compatible `/chat/completions` endpoint (also serves most local
/// inference servers).
pub struct OpenAiTransport {
    base_url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl OpenAiTransport {
    pub const DEFAULT_BASE_URL: &'static str = "https://api.openai.com/v1";
    pub const KEY_VAR: &'static str = "OPENAI_API_KEY";

    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Result<Self, TransportError> {
        Ok(OpenAiTransport {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            client: http_client(Duration::from_secs(120))?,
        })
    }

    /// Reads the key from `OPENAI_API_KEY`.
    pub fn from_env(base_url: Option<String>) -> Result<Self, TransportError> {
        Self::new(base_url.unwrap_or_else(|| Self::DEFAULT_BASE_URL.into()), std::env::var(Self::KEY_VAR).ok())
    }

    pub fn request_body(request: &ChatRequest) -> Value {
        let mut body = json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.temperature,
        });
        if !request.tools.is_empty() {
            body["tools"] = Value::Array(request.tools.clone());
        }
        body
    }

    pub fn parse_response(value: &Value) -> Result<ChatResponse, TransportError> {
        let message = value
            .pointer("/choices/0/message")
            .ok_or_else(|| TransportError::Decode(format!("no choices in {value}")))?;
        let mut message: ChatMessage =
            serde_json::from_value(message.clone()).map_err(|e| TransportError::Decode(e.to_string()))?;
        message.role = Role::Assistant;
        let usage = TokenUsage {
            prompt_tokens: value.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
            completion_tokens: value.pointer("/usage/completion_tokens").and_then(Value::as_u64).unwrap_or(0),
        };
        Ok(ChatResponse { message, usage })
    }
}

impl ChatTransport for OpenAiTransport {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, TransportError> {
        let mut headers = Vec::new();
        if let Some(key) = &self.api_key {
            headers.push(("authorization", format!("Bearer {key}")));
        }
        let url = format!("{}/chat/completions", self.base_url);
        let value = post_json(&self.client, &url, &headers, &Self::request_body(request))?;
        Self::parse_response(&value)
    }
}

/// Anthropic Messages API adapter.
pub struct AnthropicTransport {
    base_url: String,
    api_key: String,
    max_tokens: u32,
    client: reqwest::blocking::Client,
}

impl AnthropicTransport {
    pub const DEFAULT_BASE_URL: &'static str = "https://api.anthropic.com";
    pub const KEY_VAR: &'static str = "ANTHROPIC_API_KEY";
    const VERSION: &'static str = "2023-06-01";

    pub fn new(base_url: impl Into<String>, api_key: String) -> Result<Self, TransportError> {
        Ok(AnthropicTransport {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            max_tokens: 2048,
            client: http_client(Duration::from_secs(120))?,
        })
    }

    /// Reads the key from `ANTHROPIC_API_KEY`.
    pub fn from_env(base_url: Option<String>) -> Result<Self, TransportError> {
        let key = std::env::var(Self::KEY_VAR).map_err(|_| TransportError::Config(Self::KEY_VAR.into()))?;
        Self::new(base_url.unwrap_or_else(|| Self::DEFAULT_BASE_URL.into()), key)
    }

    pub fn request_body(&self, request: &ChatRequest) -> Value {
        let system: Vec<&str> =
            request.messages.iter().filter(|m| m.role == Role::System).map(|m| m.content_str()).collect();
        let mut messages: Vec<Value> = Vec::new();
        for m in request.messages.iter().filter(|m| m.role != Role::System) {
            let (role, blocks) = match m.role {
                Role::User => ("user", vec![json!({"type": "text", "text": m.content_str()})]),
                Role::Tool => (
                    "user",
                    vec![json!({
                        "type": "tool_result",
                        "tool_use_id": m.tool_call_id.clone().unwrap_or_default(),
                        "content": m.content_str(),
                    })],
                ),
                Role::Assistant => {
                    let mut blocks = Vec::new();
                    if let Some(text) = m.content.as_deref().filter(|t| !t.is_empty()) {
                        blocks.push(json!({"type": "text", "text": text}));
                    }
                    for call in &m.tool_calls {
                        let input: Value = serde_json::from_str(&call.function.arguments).unwrap_or(json!({}));
                        blocks.push(json!({"type": "tool_use", "id": call.id, "name": call.function.name, "input": input}));
                    }
                    ("assistant", blocks)
                }
                Role::System => unreachable!(),
            };
            // The API wants alternating roles; merge consecutive turns.
            match messages.last_mut() {
                Some(last) if last["role"] == role => {
                    last["content"].as_array_mut().expect("content blocks").extend(blocks)
                }
                _ => messages.push(json!({"role": role, "content": blocks})),
            }
        }
        let tools: Vec<Value> = request
            .tools
            .iter()
            .map(|t| {
                let f = &t["function"];
                json!({"name": f["name"], "description": f["description"], "input_schema": f["parameters"]})
            })
            .collect();
        let mut body = json!({
            "model": request.model,
            "max_tokens": self.max_tokens,
            "temperature": request.temperature,
            "messages": messages,
        });
        if !system.is_empty() {
            body["system"] = json!(system.join("\n\n"));
        }
        if !tools.is_empty() {
            body["tools"] = Value::Array(tools);
        }
        body
    }

    pub fn parse_response(value: &Value) -> Result<ChatResponse, TransportError> {
        let blocks =
            value["content"].as_array().ok_or_else(|| TransportError::Decode(format!("no content in {value}")))?;
        let mut text = String::new();
        let mut calls = Vec::new();
        for b in blocks {
            match b["type"].as_str() {
                Some("text") => text.push_str(b["text"].as_str().unwrap_or("")),
                Some("tool_use") => calls.push(ToolCall {
                    id: b["id"].as_str().unwrap_or_default().to_string(),
                    kind: "function".into(),
                    function: FunctionCall {
                        name: b["name"].as_str().unwrap_or_default().to_string(),
                        arguments: b["input"].to_string(),
                    },
                }),
                _ => {}
            }
        }
        let usage = TokenUsage {
            prompt_tokens: value.pointer("/usage/input_tokens").and_then(Value::as_u64).unwrap_or(0),
            completion_tokens: value.pointer("/usage/output_tokens").and_then(Value::as_u64).unwrap_or(0),
        };
        let content = (!text.is_empty()).then_some(text);
        Ok(ChatResponse { message: ChatMessage::assistant_tool_calls(content, calls), usage })
    }
}

impl ChatTransport for AnthropicTransport {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, TransportError> {
        let headers = [("x-api-key", self.api_key.clone()), ("anthropic-version", Self::VERSION.to_string())];
        let url = format!("{}/v1/messages", self.base_url);
        let value = post_json(&self.client, &url, &headers, &self.request_body(request))?;
        Self::parse_response(&value)
    }
}

type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// Retries retryable failures with exponential backoff.
pub struct RetryingTransport<T> {
    inner: T,
    max_attempts: usize,
    base_delay: Duration,
    max_delay: Duration,
    sleep: Sleeper,
}

impl<T: ChatTransport> RetryingTransport<T> {
    pub const DEFAULT_ATTEMPTS: usize = 5;

    pub fn new(inner: T) -> Self {
        RetryingTransport {
            inner,
            max_attempts: Self::DEFAULT_ATTEMPTS,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
            sleep: Arc::new(std::thread::sleep),
        }
    }

    pub fn with_attempts(mut self, attempts: usize) -> Self {
        self.max_attempts = attempts.max(1);
        self
    }

    /// Replaces the sleep function (tests record delays instead of waiting).
    pub fn with_sleeper(mut self, sleep: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleep = Arc::new(sleep);
        self
    }

    pub fn delay_for(&self, retry: usize) -> Duration {
        self.base_delay.saturating_mul(1u32 << retry.min(16)).min(self.max_delay)
    }
}

impl<T: ChatTransport> ChatTransport for RetryingTransport<T> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, TransportError> {
        let mut attempt = 0;
        loop {
            match self.inner.complete(request) {
                Ok(r) => return Ok(r),
                Err(e) if e.is_retryable() && attempt + 1 < self.max_attempts => {
                    log::warn!("transport attempt {} failed: {e}; retrying", attempt + 1);
                    (self.sleep)(self.delay_for(attempt));
                    attempt += 1;
                }
                Err(e) if e.is_retryable() => {
                    return Err(TransportError::RetriesExhausted { attempts: attempt + 1, last: Box::new(e) })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Token bucket shared by every session that talks to one endpoint.
pub struct RateLimiter {
    capacity: f64,
    per_second: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn new(requests_per_second: f64, burst: u32) -> Self {
        let capacity = f64::from(burst.max(1));
        RateLimiter { capacity, per_second: requests_per_second, state: Mutex::new((capacity, Instant::now())) }
    }

    /// Takes one token, or returns how long to wait for it.
    pub fn try_acquire(&self) -> Result<(), Duration> {
        let mut state = self.state.lock().expect("rate limiter lock");
        let now = Instant::now();
        let refill = now.duration_since(state.1).as_secs_f64() * self.per_second;
        state.0 = (state.0 + refill).min(self.capacity);
        state.1 = now;
        if state.0 >= 1.0 {
            state.0 -= 1.0;
            Ok(())
        } else {
            Err(Duration::from_secs_f64((1.0 - state.0) / self.per_second))
        }
    }

    pub fn acquire(&self) {
        while let Err(wait) = self.try_acquire() {
            std::thread::sleep(wait);
        }
    }
}

pub struct RateLimitedTransport<T> {
    inner: T,
    limiter: Arc<RateLimiter>,
}

impl<T> RateLimitedTransport<T> {
    pub fn new(inner: T, limiter: Arc<RateLimiter>) -> Self {
        RateLimitedTransport { inner, limiter }
    }
}

impl<T: ChatTransport> ChatTransport for RateLimitedTransport<T> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, TransportError> {
        self.limiter.acquire();
        self.inner.complete(request)
    }
}

/// Replies from a fixed queue and records every request.
#[derive(Default)]
pub struct ScriptedTransport {
    replies: Mutex<VecDeque<Result<ChatResponse, TransportError>>>,
    requests: Mutex<Vec<ChatRequest>>,
}

impl ScriptedTransport {
    pub fn new(replies: impl IntoIterator<Item = Result<ChatResponse, TransportError>>) -> Self {
        ScriptedTransport { replies: Mutex::new(replies.into_iter().collect()), requests: Mutex::default() }
    }

    pub fn push(&self, reply: Result<ChatResponse, TransportError>) {
        self.replies.lock().unwrap().push_back(reply);
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().unwrap().clone()
    }

    pub fn remaining(&self) -> usize {
        self.replies.lock().unwrap().len()
    }
}

impl ChatTransport for ScriptedTransport {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, TransportError> {
        self.requests.lock().unwrap().push(request.clone());
        self.replies.lock().unwrap().pop_front().unwrap_or(Err(TransportError::Exhausted))
    }
}

/// Computes each reply from the request; handy for mock models that play
/// by looking at the latest table.
pub struct FnTransport<F>(pub F);

impl<F> ChatTransport for FnTransport<F>
where
    F: Fn(&ChatRequest) -> Result<ChatResponse, TransportError> + Send + Sync,
{
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, TransportError> {
        (self.0)(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request() -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            messages: vec![
                ChatMessage::system("rules"),
                ChatMessage::user("table"),
                ChatMessage::assistant_tool_calls(
                    Some("thinking".into()),
                    vec![ToolCall::new("c1", "reveal", json!({"prize": "A", "basket": 1}))],
                ),
                ChatMessage::tool_result("c1", "new table"),
                ChatMessage::user("more"),
            ],
            tools: super::super::chat::tool_schemas(2, 5),
            temperature: 0.2,
        }
    }

    #[test]
    fn retries_then_succeeds_with_backoff() {
        let inner = ScriptedTransport::new([
            Err(TransportError::Http { status: 503, body: "busy".into() }),
            Err(TransportError::Network("reset".into())),
            Ok(ChatResponse::text("hi")),
        ]);
        let delays = Arc::new(Mutex::new(Vec::new()));
        let d = delays.clone();
        let t = RetryingTransport::new(inner).with_sleeper(move |dur| d.lock().unwrap().push(dur));
        assert_eq!(t.complete(&request()).unwrap().message.content_str(), "hi");
        let delays = delays.lock().unwrap().clone();
        assert_eq!(delays.len(), 2);
        assert_eq!(delays[1], delays[0] * 2);
    }

    #[test]
    fn gives_up_after_limit_and_skips_fatal_errors() {
        let inner = ScriptedTransport::new((0..9).map(|_| Err(TransportError::Network("down".into()))));
        let t = RetryingTransport::new(inner).with_sleeper(|_| {});
        match t.complete(&request()) {
            Err(TransportError::RetriesExhausted { attempts, .. }) => assert_eq!(attempts, 5),
            other => panic!("{other:?}"),
        }
        let inner = ScriptedTransport::new([Err(TransportError::Http { status: 401, body: "no".into() })]);
        let t = RetryingTransport::new(inner).with_sleeper(|_| panic!("must not retry"));
        assert!(matches!(t.complete(&request()), Err(TransportError::Http { status: 401, .. })));
        assert!(matches!(classify_http(400, "maximum context length is 4096".into()), TransportError::ContextLength(_)));
    }

    #[test]
    fn rate_limiter_spends_burst_then_waits() {
        let limiter = RateLimiter::new(1.0, 2);
        assert!(limiter.try_acquire().is_ok());
        assert!(limiter.try_acquire().is_ok());
        let wait = limiter.try_acquire().unwrap_err();
        assert!(wait > Duration::from_millis(500) && wait <= Duration::from_secs(1));
    }

    #[test]
    fn openai_wire_shape() {
        let body = OpenAiTransport::request_body(&request());
        assert_eq!(body["temperature"], json!(0.2));
        assert_eq!(body["messages"][2]["tool_calls"][0]["function"]["name"], json!("reveal"));
        assert_eq!(body["messages"][3]["tool_call_id"], json!("c1"));
        let reply = json!({
            "choices": [{"message": {"role": "assistant", "content": null,
                "tool_calls": [{"id": "x", "type": "function",
                    "function": {"name": "select", "arguments": "{\"basket\":2}"}}]}}],
            "usage": {"prompt_tokens": 10, "completion_tokens": 3}
        });
        let r = OpenAiTransport::parse_response(&reply).unwrap();
        assert_eq!(r.message.tool_calls[0].function.name, "select");
        assert_eq!(r.usage, TokenUsage { prompt_tokens: 10, completion_tokens: 3 });
    }

    #[test]
    fn anthropic_translation() {
        let t = AnthropicTransport::new("http://localhost", "k".into()).unwrap();
        let body = t.request_body(&request());
        assert_eq!(body["system"], json!("rules"));
        let msgs = body["messages"].as_array().unwrap();
        assert_eq!(msgs.len(), 3, "{body}");
        assert_eq!(msgs[1]["content"][1]["type"], json!("tool_use"));
        assert_eq!(msgs[2]["content"][0]["type"], json!("tool_result"));
        assert_eq!(msgs[2]["content"][1]["text"], json!("more"));
        assert_eq!(body["tools"][0]["input_schema"]["required"], json!(["prize", "basket"]));
        let reply = json!({"content": [{"type": "text", "text": "ok"},
            {"type": "tool_use", "id": "t1", "name": "default", "input": {"decision": true}}],
            "usage": {"input_tokens": 5, "output_tokens": 2}});
        let r = AnthropicTransport::parse_response(&reply).unwrap();
        assert_eq!(r.message.content.as_deref(), Some("ok"));
        assert_eq!(r.message.tool_calls[0].function.arguments, r#"{"decision":true}"#);
    }
}
