use super::domain::ToolSchema;
use super::rules::RuleId;
use super::Role;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::fmt;

/// Reserved user-side signals that end an episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ControlSignal {
    Stop,
    Transfer,
    OutOfScope,
}

impl ControlSignal {
    pub const ALL: [ControlSignal; 3] = [ControlSignal::Stop, ControlSignal::Transfer, ControlSignal::OutOfScope];

    /// The literal marker a user simulator writes into its answer.
    pub fn marker(self) -> &'static str {
        match self {
            ControlSignal::Stop => "###STOP###",
            ControlSignal::Transfer => "###TRANSFER###",
            ControlSignal::OutOfScope => "###OUT-OF-SCOPE###",
        }
    }

    pub fn termination(self) -> super::Termination {
        match self {
            ControlSignal::Stop => super::Termination::UserStop,
            ControlSignal::Transfer => super::Termination::Transfer,
            ControlSignal::OutOfScope => super::Termination::OutOfScope,
        }
    }
}

impl fmt::Display for ControlSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.marker())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    pub arguments: Map<String, Value>,
    pub caller: Role,
}

impl ToolCall {
    pub fn new(name: impl Into<String>, arguments: Value, caller: Role) -> Self {
        let arguments = match arguments {
            Value::Object(m) => m,
            Value::Null => Map::new(),
            other => {
                let mut m = Map::new();
                m.insert("value".into(), other);
                m
            }
        };
        ToolCall { name: name.into(), arguments, caller }
    }
}

/// One party's action for a turn. The idle party contributes `Empty`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Action {
    AgentMessage(String),
    UserMessage(String),
    ToolCall(ToolCall),
    ControlSignal(ControlSignal),
    Empty,
}

impl Action {
    pub fn is_empty(&self) -> bool {
        matches!(self, Action::Empty)
    }
}

/// `(agent action, user action)` for one turn.
#[derive(Clone, Debug, PartialEq)]
pub struct JointAction {
    pub agent: Action,
    pub user: Action,
}

impl JointAction {
    pub fn new(agent: Action, user: Action) -> Self {
        JointAction { agent, user }
    }

    /// Places `action` in `role`'s slot and `Empty` in the other.
    pub fn single(role: Role, action: Action) -> Self {
        match role {
            Role::Agent => JointAction { agent: action, user: Action::Empty },
            Role::User => JointAction { agent: Action::Empty, user: action },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolFailure {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<RuleId>,
    pub detail: String,
}

/// Result of a tool execution; `output` is canonical JSON text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResult {
    pub ok: bool,
    pub output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ToolFailure>,
}

impl ToolResult {
    pub fn success(output: String) -> Self {
        ToolResult { ok: true, output, error: None }
    }

    pub fn failure(err: &super::EnvError) -> Self {
        let rule = match err {
            super::EnvError::PolicyRejection { rule, .. } => Some(*rule),
            _ => None,
        };
        let failure = ToolFailure { kind: err.kind().to_string(), rule, detail: err.to_string() };
        let output = super::canonical_json(&serde_json::json!({ "error": failure.kind, "detail": failure.detail }));
        ToolResult { ok: false, output, error: Some(failure) }
    }
}

/// One entry of the shared interaction history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum HistoryEntry {
    Message { role: Role, text: String },
    ToolCall { caller: Role, name: String, arguments: Map<String, Value> },
    ToolResult { caller: Role, name: String, ok: bool, output: String },
    Signal { role: Role, signal: ControlSignal },
}

impl HistoryEntry {
    pub fn is_message(&self) -> bool {
        matches!(self, HistoryEntry::Message { .. })
    }
}

/// What one party sees at a turn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub role: Role,
    pub system_context: String,
    pub tools: Vec<ToolSchema>,
    pub history: Vec<HistoryEntry>,
    pub turn: u64,
}

impl Observation {
    pub fn messages(&self) -> impl Iterator<Item = &HistoryEntry> {
        self.history.iter().filter(|e| e.is_message())
    }
}
