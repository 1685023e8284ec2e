//! State-based outcome checkers.
//!
//! A [`CheckerSpec`] is plain data: a reference final state, the key calls
//! a solution must make, and the policy rules to audit. [`Verifier`]
//! interprets it against a trajectory and emits a binary reward.

mod calls;
mod fields;
mod policy;

pub use calls::{derive_key_functions, extract_function_calls, match_key_functions, FnReport, FunctionCall, KeyFunction};
pub use fields::{classify_field, deep_compare, entity_leaves, flatten, fuzzy_text_match, FieldClass, StateReport};
pub use policy::{check_policies, PolicyReport};

use crate::env::{Domain, EnvState, TaskSpec, Termination};
use crate::rollout::Trajectory;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;

pub const DEFAULT_SEMANTIC_THRESHOLD: f64 = 0.5;

fn default_threshold() -> f64 {
    DEFAULT_SEMANTIC_THRESHOLD
}

/// One comparison outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub class: String,
    pub expected: Value,
    pub actual: Value,
    pub pass: bool,
}

impl Check {
    pub fn new(name: &str, class: &str, expected: Value, actual: Value, pass: bool) -> Self {
        Check { name: name.to_string(), class: class.to_string(), expected, actual, pass }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckerSpec {
    pub reference_final_state: EnvState,
    /// State the calls are replayed from for policy checks. Defaults to the
    /// domain's fixture state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<EnvState>,
    #[serde(default)]
    pub key_functions: Vec<KeyFunction>,
    #[serde(default)]
    pub policy_focuses: Vec<String>,
    #[serde(default)]
    pub field_overrides: BTreeMap<String, FieldClass>,
    #[serde(default = "default_threshold")]
    pub semantic_threshold: f64,
}

impl CheckerSpec {
    pub fn new(reference_final_state: EnvState) -> Self {
        CheckerSpec {
            reference_final_state,
            initial_state: None,
            key_functions: Vec::new(),
            policy_focuses: Vec::new(),
            field_overrides: BTreeMap::new(),
            semantic_threshold: DEFAULT_SEMANTIC_THRESHOLD,
        }
    }

    /// Key functions must name mutating tools; focuses must name known rules.
    pub fn validate(&self, domain: &Domain) -> Result<(), String> {
        if let Some(k) = self.key_functions.iter().find(|k| !domain.tools().is_mutating(&k.name)) {
            return Err(format!("key function `{}` is not a mutating tool", k.name));
        }
        for r in &self.policy_focuses {
            r.parse::<crate::env::RuleId>().map_err(|e| e.to_string())?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentScores {
    pub state: f64,
    pub functions: f64,
    pub policy: f64,
}

/// Field order is fixed by declaration, so serialized reports are stable.
/// `checks_state` lists only failing fields; the counts cover all of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub overall_pass: bool,
    pub reward: u8,
    pub component_scores: ComponentScores,
    pub state_fields_passed: usize,
    pub state_fields_total: usize,
    pub checks_state: Vec<Check>,
    pub checks_functions: Vec<Check>,
    pub checks_policy: Vec<Check>,
}

impl VerificationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Interprets checker specs against trajectories of one domain.
#[derive(Clone, Debug)]
pub struct Verifier {
    domain: Domain,
}

impl Verifier {
    pub fn new(domain: &Domain) -> Self {
        Verifier { domain: domain.clone() }
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn evaluate_submission(&self, spec: &CheckerSpec, traj: &Trajectory) -> VerificationReport {
        let th = spec.semantic_threshold;
        let mut state = deep_compare(&spec.reference_final_state, &traj.final_state, &spec.field_overrides, th);
        if traj.termination == Termination::Error {
            let detail = traj.error.clone().unwrap_or_else(|| "episode ended with an error".into());
            state.checks.push(Check::new("episode.termination", "exact", Value::from("not error"), Value::from(detail), false));
            state.total += 1;
            state.score = state.passed as f64 / state.total as f64;
        }
        let calls = extract_function_calls(traj);
        let functions = match_key_functions(&spec.key_functions, &calls, th);
        let initial = spec.initial_state.clone().unwrap_or_else(|| self.domain.base_state(traj.seed));
        let policy = match check_policies(&self.domain, &initial, &calls, &spec.policy_focuses) {
            Ok(p) => p,
            Err(e) => PolicyReport {
                score: 0.0,
                checks: vec![Check::new("policy_focuses", "policy", Value::from("known rule ids"), Value::from(e.to_string()), false)],
            },
        };
        let scores = ComponentScores { state: state.score, functions: functions.score, policy: policy.score };
        let overall_pass = scores.state == 1.0 && scores.functions == 1.0 && scores.policy == 1.0;
        VerificationReport {
            overall_pass,
            reward: u8::from(overall_pass),
            component_scores: scores,
            state_fields_passed: state.passed,
            state_fields_total: state.total,
            checks_state: state.checks.into_iter().filter(|c| !c.pass).collect(),
            checks_functions: functions.checks,
            checks_policy: policy.checks,
        }
    }

    /// Binary reward; tasks without a checker score 0.
    pub fn reward(&self, task: &TaskSpec, traj: &Trajectory) -> f64 {
        match &task.checker_spec {
            Some(spec) => f64::from(self.evaluate_submission(spec, traj).reward),
            None => {
                log::warn!("task {} has no checker spec; reward 0", task.id);
                0.0
            }
        }
    }
}
