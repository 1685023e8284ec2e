use crate::verifier::CheckerSpec;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// A synthesized task instance. The user-facing fields mirror the scenario
/// output format of the intent worker; `checker_spec` is attached once the
/// instance has been validated.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    #[serde(default)]
    pub id: String,
    pub context: String,
    pub purpose: String,
    pub reason_for_call: String,
    pub known_info: String,
    pub task_instructions: String,
    #[serde(default)]
    pub rubrics: String,
    #[serde(default)]
    pub must_have_functions: Vec<String>,
    #[serde(default)]
    pub initial_state_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checker_spec: Option<CheckerSpec>,
    #[serde(default)]
    pub selected_parameters: Map<String, Value>,
}

const SINGLE_REF_KEYS: [&str; 5] = ["user_id", "reservation_id", "flight_number", "customer_id", "order_id"];
const LIST_REF_KEYS: [&str; 3] = ["reservation_ids", "flight_numbers", "order_ids"];

impl TaskSpec {
    /// Entity ids the task depends on, read from well-known keys of
    /// `selected_parameters`.
    pub fn referenced_entities(&self) -> Vec<String> {
        let mut out = Vec::new();
        for key in SINGLE_REF_KEYS {
            if let Some(Value::String(id)) = self.selected_parameters.get(key) {
                out.push(id.clone());
            }
        }
        for key in LIST_REF_KEYS {
            if let Some(Value::Array(ids)) = self.selected_parameters.get(key) {
                out.extend(ids.iter().filter_map(Value::as_str).map(str::to_string));
            }
        }
        out
    }

    pub fn param_str(&self, key: &str) -> Option<&str> {
        self.selected_parameters.get(key).and_then(Value::as_str)
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}
