use super::calls::FunctionCall;
use super::Check;
use crate::env::{Domain, EnvState, RuleId, UnknownRule};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub score: f64,
    pub checks: Vec<Check>,
}

/// Replays the successful calls from `initial` and evaluates each rule on
/// every pre-call state. A rule passes when no call violates it.
pub fn check_policies(
    domain: &Domain,
    initial: &EnvState,
    calls: &[FunctionCall],
    rule_ids: &[String],
) -> Result<PolicyReport, UnknownRule> {
    let rules = rule_ids.iter().map(|r| r.parse::<RuleId>()).collect::<Result<Vec<_>, _>>()?;
    let mut violations: Vec<Option<String>> = vec![None; rules.len()];
    let mut state = initial.clone();
    for call in calls.iter().filter(|c| c.ok) {
        let tc = call.to_tool_call();
        for (i, r) in rules.iter().enumerate() {
            if violations[i].is_none() {
                violations[i] = r.violation(&state, &tc, domain.now());
            }
        }
        if let Ok((next, _)) = domain.execute_tool(&state, &tc) {
            state = next;
        }
    }
    let checks: Vec<Check> = rules
        .iter()
        .zip(violations)
        .map(|(r, v)| {
            let pass = v.is_none();
            Check::new(r.as_str(), "policy", Value::from("no violation"), v.map(Value::from).unwrap_or(Value::Null), pass)
        })
        .collect();
    let passed = checks.iter().filter(|c| c.pass).count();
    let score = if checks.is_empty() { 1.0 } else { passed as f64 / checks.len() as f64 };
    Ok(PolicyReport { score, checks })
}
