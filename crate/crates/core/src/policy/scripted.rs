use super::{check_role, Policy, PolicyError, PolicyOutput};
use crate::env::{Observation, Role};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Canned utterances for both parties, in tagged output format.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Script {
    pub name: String,
    #[serde(default)]
    pub agent: Vec<String>,
    #[serde(default)]
    pub user: Vec<String>,
}

impl Script {
    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }

    pub fn greeting() -> Self {
        serde_json::from_str(include_str!("../../fixtures/scripts/greeting.json")).expect("shipped script parses")
    }

    pub fn steps(&self, role: Role) -> &[String] {
        match role {
            Role::Agent => &self.agent,
            Role::User => &self.user,
        }
    }

    pub fn policy(&self, role: Role) -> ScriptedPolicy {
        ScriptedPolicy::new(role, format!("scripted:{}", self.name), self.steps(role).to_vec())
    }
}

/// Replays a fixed list of outputs, one per invocation. Holds a cursor, so
/// each episode needs its own instance.
#[derive(Clone, Debug)]
pub struct ScriptedPolicy {
    role: Role,
    id: String,
    steps: Vec<String>,
    cursor: usize,
}

impl ScriptedPolicy {
    pub fn new(role: Role, id: impl Into<String>, steps: Vec<String>) -> Self {
        ScriptedPolicy { role, id: id.into(), steps, cursor: 0 }
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }
}

impl Policy for ScriptedPolicy {
    fn role(&self) -> Role {
        self.role
    }

    fn id(&self) -> String {
        self.id.clone()
    }

    fn next_action(&mut self, obs: &Observation, _seed: u64) -> Result<PolicyOutput, PolicyError> {
        check_role(self.role, obs)?;
        let text = self.steps.get(self.cursor).ok_or(PolicyError::ScriptExhausted(self.cursor))?;
        self.cursor += 1;
        Ok(PolicyOutput::from_text(self.role, text.clone()))
    }
}
