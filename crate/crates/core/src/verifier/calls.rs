use super::fields::{classify_field, fuzzy_text_match, FieldClass};
use super::Check;
use crate::env::{Domain, Role, ToolCall};
use crate::policy::Payload;
use crate::rollout::Trajectory;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::collections::BTreeMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionCall {
    pub name: String,
    pub arguments: Map<String, Value>,
    pub actor: Role,
    /// Whether the environment executed the call successfully.
    pub ok: bool,
}

impl FunctionCall {
    pub fn to_tool_call(&self) -> ToolCall {
        ToolCall { name: self.name.clone(), arguments: self.arguments.clone(), caller: self.actor }
    }
}

/// Tool-call turns in order; malformed turns contribute nothing.
pub fn extract_function_calls(traj: &Trajectory) -> Vec<FunctionCall> {
    traj.turns
        .iter()
        .filter_map(|t| match &t.parsed.payload {
            Payload::Function { name, arguments } => Some(FunctionCall {
                name: name.clone(),
                arguments: arguments.clone(),
                actor: t.actor,
                ok: t.tool_result.as_ref().map(|r| r.ok).unwrap_or(false),
            }),
            _ => None,
        })
        .collect()
}

/// A call that must appear in an evaluated trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyFunction {
    pub name: String,
    #[serde(default)]
    pub critical: Map<String, Value>,
    #[serde(default)]
    pub semantic: Map<String, Value>,
}

/// Key functions from a validated reference trace: successful calls to
/// mutating tools named in `must_have`. Parameters split by field class.
pub fn derive_key_functions(calls: &[FunctionCall], must_have: &[String], domain: &Domain) -> Vec<KeyFunction> {
    let none = BTreeMap::new();
    calls
        .iter()
        .filter(|c| c.ok && domain.tools().is_mutating(&c.name) && must_have.iter().any(|m| m == &c.name))
        .map(|c| {
            let mut k = KeyFunction { name: c.name.clone(), critical: Map::new(), semantic: Map::new() };
            for (p, v) in &c.arguments {
                match classify_field(p, &none) {
                    FieldClass::Exact => {
                        k.critical.insert(p.clone(), v.clone());
                    }
                    FieldClass::Semantic => {
                        k.semantic.insert(p.clone(), v.clone());
                    }
                    FieldClass::Skip => {}
                }
            }
            k
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FnReport {
    pub score: f64,
    pub matched: usize,
    pub total: usize,
    pub checks: Vec<Check>,
}

fn matches(k: &KeyFunction, c: &FunctionCall, threshold: f64) -> bool {
    c.ok && c.name == k.name
        && k.critical.iter().all(|(p, v)| c.arguments.get(p) == Some(v))
        && k.semantic.iter().all(|(p, v)| match (v, c.arguments.get(p)) {
            (Value::String(a), Some(Value::String(b))) => fuzzy_text_match(a, b) >= threshold,
            (a, b) => Some(a) == b,
        })
}

/// Each key function needs some successful evaluated call with the same
/// name, equal critical params and similar semantic params. Order is free.
pub fn match_key_functions(keys: &[KeyFunction], evaluated: &[FunctionCall], threshold: f64) -> FnReport {
    let checks: Vec<Check> = keys
        .iter()
        .map(|k| {
            let hit = evaluated.iter().find(|c| matches(k, c, threshold));
            let expected = serde_json::to_value(k).expect("key function serializes");
            let actual = hit.map(|c| Value::Object(c.arguments.clone())).unwrap_or(Value::Null);
            Check::new(&k.name, "key_function", expected, actual, hit.is_some())
        })
        .collect();
    let matched = checks.iter().filter(|c| c.pass).count();
    let total = checks.len();
    let score = if total == 0 { 1.0 } else { matched as f64 / total as f64 };
    FnReport { score, matched, total, checks }
}
