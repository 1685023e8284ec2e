use super::{check_role, Policy, PolicyError, PolicyOutput};
use crate::env::{canonical_json, HistoryEntry, Observation, Role};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        ChatMessage { role: role.to_string(), content: content.into() }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new("system", content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new("user", content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new("assistant", content)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClientError {
    #[error("transport failure: {0}")]
    Unavailable(String),
    #[error("malformed response: {0}")]
    BadResponse(String),
}

/// Anything that turns a chat transcript into one completion string.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<String, ClientError>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientConfig {
    pub url: String,
    pub model: String,
    /// Environment variable holding the bearer token, if any.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub retries: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            url: "http://127.0.0.1:8000/v1".into(),
            model: "default".into(),
            api_key_env: "TOOLTRAIN_API_KEY".into(),
            timeout_secs: 60,
            retries: 2,
            backoff_ms: 200,
            max_in_flight: 8,
        }
    }
}

impl ClientConfig {
    pub fn endpoint(&self) -> String {
        let base = self.url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

struct Gate {
    in_flight: Mutex<usize>,
    freed: Condvar,
    cap: usize,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.cap {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// Blocking chat-completion client. Returns the completion text verbatim;
/// interpretation is left to the caller.
#[derive(Clone)]
pub struct ChatClient {
    config: ClientConfig,
    http: reqwest::blocking::Client,
    gate: Arc<Gate>,
}

impl ChatClient {
    pub fn new(config: ClientConfig) -> Result<Self, ClientError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ClientError::Unavailable(e.to_string()))?;
        let gate = Arc::new(Gate { in_flight: Mutex::new(0), freed: Condvar::new(), cap: config.max_in_flight.max(1) });
        Ok(ChatClient { config, http, gate })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    fn attempt(&self, body: &Value) -> Result<String, (bool, ClientError)> {
        let mut req = self.http.post(self.config.endpoint()).json(body);
        if let Ok(key) = std::env::var(&self.config.api_key_env) {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| (true, ClientError::Unavailable(e.to_string())))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err((true, ClientError::Unavailable(format!("HTTP {status}"))));
        }
        if !status.is_success() {
            return Err((false, ClientError::BadResponse(format!("HTTP {status}"))));
        }
        let v: Value = resp.json().map_err(|e| (false, ClientError::BadResponse(e.to_string())))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| (false, ClientError::BadResponse("missing choices[0].message.content".into())))
    }
}

impl ChatBackend for ChatClient {
    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<String, ClientError> {
        let _slot = self.gate.acquire();
        let body = json!({ "model": self.config.model, "messages": messages, "temperature": temperature });
        let mut last = ClientError::Unavailable("no attempt made".into());
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(self.config.backoff_ms << (attempt - 1).min(6)));
            }
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err((true, e)) => {
                    log::warn!("chat request attempt {} failed: {e}", attempt + 1);
                    last = e;
                }
                Err((false, e)) => return Err(e),
            }
        }
        Err(last)
    }
}

/// Renders an observation as a chat transcript from the observer's side:
/// its own turns are `assistant`, everything else arrives as `user`.
/// `worker` prefixes the system message with a `Worker: <name>` line.
pub fn observation_messages(obs: &Observation, worker: Option<&str>, prompt: &str) -> Vec<ChatMessage> {
    let mut system = String::new();
    if let Some(w) = worker {
        system.push_str(&format!("Worker: {w}\n"));
    }
    if !prompt.is_empty() {
        system.push_str(prompt.trim_end());
        system.push_str("\n\n");
    }
    system.push_str(&obs.system_context);
    if !obs.tools.is_empty() {
        system.push_str("\n\nAvailable tools:\n");
        for t in &obs.tools {
            system.push_str(&canonical_json(t));
            system.push('\n');
        }
    }
    let mut out = vec![ChatMessage::system(system)];
    for e in &obs.history {
        out.push(match e {
            HistoryEntry::Message { role, text } if *role == obs.role => ChatMessage::assistant(match role {
                Role::Agent => format!("<message>{text}</message>"),
                Role::User => format!("<answer>{text}</answer>"),
            }),
            HistoryEntry::Message { text, .. } => ChatMessage::user(text.clone()),
            HistoryEntry::ToolCall { caller, name, arguments } if *caller == obs.role => ChatMessage::assistant(format!(
                "<function>{}</function>",
                canonical_json(&json!({ "name": name, "arguments": arguments }))
            )),
            HistoryEntry::ToolCall { caller, name, arguments } => {
                ChatMessage::user(format!("[{caller} tool call] {name} {}", canonical_json(arguments)))
            }
            HistoryEntry::ToolResult { name, ok, output, .. } => {
                ChatMessage::user(format!("Tool result ({name}, {}): {output}", if *ok { "ok" } else { "error" }))
            }
            HistoryEntry::Signal { role, signal } => ChatMessage::user(format!("[{role} signal] {}", signal.marker())),
        });
    }
    out
}

/// A policy backed by any [`ChatBackend`]: a remote endpoint, or the
/// synthesis mock.
pub struct ChatPolicy {
    role: Role,
    backend: Arc<dyn ChatBackend>,
    worker: Option<String>,
    prompt: String,
    temperature: f64,
    id: String,
}

impl ChatPolicy {
    pub fn new(role: Role, backend: Arc<dyn ChatBackend>, id: impl Into<String>) -> Self {
        ChatPolicy { role, backend, worker: None, prompt: String::new(), temperature: 0.0, id: id.into() }
    }

    pub fn with_prompt(mut self, worker: Option<&str>, prompt: impl Into<String>) -> Self {
        self.worker = worker.map(str::to_string);
        self.prompt = prompt.into();
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }
}

impl Policy for ChatPolicy {
    fn role(&self) -> Role {
        self.role
    }

    fn id(&self) -> String {
        self.id.clone()
    }

    fn next_action(&mut self, obs: &Observation, _seed: u64) -> Result<PolicyOutput, PolicyError> {
        check_role(self.role, obs)?;
        let messages = observation_messages(obs, self.worker.as_deref(), &self.prompt);
        let text = self
            .backend
            .complete(&messages, self.temperature)
            .map_err(|e| PolicyError::RemoteUnavailable(e.to_string()))?;
        Ok(PolicyOutput::from_text(self.role, text))
    }
}
