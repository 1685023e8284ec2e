//! Agent and user policies.
//!
//! Every policy maps an [`Observation`] to raw text; the text is parsed with
//! the role's output grammar into a [`ParsedAction`]. Parsing never fails:
//! anything unparseable becomes [`Payload::Malformed`].

mod brain;
mod chat;
mod parse;
mod scripted;
mod spec;
mod toy;

pub use brain::{AirlineAgentBrain, Brief, HeuristicPolicy, ScenarioUserBrain, Transcript, TranscriptEntry};
pub use chat::{
    observation_messages, ChatBackend, ChatClient, ChatMessage, ChatPolicy, ClientConfig, ClientError,
};
pub use parse::{parse_agent_output, parse_output, parse_user_output, render};
pub use scripted::{Script, ScriptedPolicy};
pub use spec::{binding_from, PolicySpec};
pub use toy::{
    toy_contexts, toy_logprob_and_grad, ToyArgBinding, ToyPolicy, ToyPolicyParams, ToyToken, EOS, SAY, TOY_FEATURES,
    TOY_MAX_TOKENS,
};

use crate::env::{ControlSignal, Observation, Role};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    Function { name: String, arguments: Map<String, Value> },
    Message { text: String },
    Answer { text: String },
    Signal { signal: ControlSignal, residual: String },
    Malformed { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParsedAction {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub think: Option<String>,
    pub payload: Payload,
}

impl ParsedAction {
    pub fn new(think: Option<String>, payload: Payload) -> Self {
        ParsedAction { think, payload }
    }

    pub fn function(name: impl Into<String>, arguments: Value) -> Self {
        let arguments = match arguments {
            Value::Object(m) => m,
            _ => Map::new(),
        };
        Self::new(None, Payload::Function { name: name.into(), arguments })
    }

    pub fn message(text: impl Into<String>) -> Self {
        Self::new(None, Payload::Message { text: text.into() })
    }

    pub fn malformed(reason: impl Into<String>) -> Self {
        Self::new(None, Payload::Malformed { reason: reason.into() })
    }

    pub fn is_malformed(&self) -> bool {
        matches!(self.payload, Payload::Malformed { .. })
    }

    pub fn is_function(&self) -> bool {
        matches!(self.payload, Payload::Function { .. })
    }
}

/// One policy invocation. Token fields are filled only by policies that
/// expose token-level probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutput {
    pub raw_text: String,
    pub parsed: ParsedAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_ids: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
    /// Context feature each token was sampled under (toy policy only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_contexts: Option<Vec<u32>>,
}

impl PolicyOutput {
    /// Parses `raw_text` with `role`'s grammar; no token information.
    pub fn from_text(role: Role, raw_text: impl Into<String>) -> Self {
        let raw_text = raw_text.into();
        let parsed = parse_output(role, &raw_text);
        PolicyOutput { raw_text, parsed, token_ids: None, token_logprobs: None, token_contexts: None }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("remote policy unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("script exhausted at step {0}")]
    ScriptExhausted(usize),
    #[error("observation for {got} given to a {expected} policy")]
    RoleMismatch { expected: Role, got: Role },
    #[error("unknown token `{0}`")]
    UnknownToken(String),
}

pub trait Policy: Send {
    fn role(&self) -> Role;

    /// Identifier recorded in reports, e.g. `scripted:greeting`.
    fn id(&self) -> String;

    fn next_action(&mut self, obs: &Observation, seed: u64) -> Result<PolicyOutput, PolicyError>;
}

pub(crate) fn check_role(expected: Role, obs: &Observation) -> Result<(), PolicyError> {
    if obs.role == expected {
        Ok(())
    } else {
        Err(PolicyError::RoleMismatch { expected, got: obs.role })
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn role(&self) -> Role {
        (**self).role()
    }

    fn id(&self) -> String {
        (**self).id()
    }

    fn next_action(&mut self, obs: &Observation, seed: u64) -> Result<PolicyOutput, PolicyError> {
        (**self).next_action(obs, seed)
    }
}
