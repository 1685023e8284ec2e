use super::Check;
use crate::env::EnvState;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldClass {
    Exact,
    Semantic,
    Skip,
}

impl FieldClass {
    pub fn as_str(self) -> &'static str {
        match self {
            FieldClass::Exact => "exact",
            FieldClass::Semantic => "semantic",
            FieldClass::Skip => "skip",
        }
    }
}

/// Last path segment that is not an array index.
fn field_name(path: &str) -> &str {
    path.rsplit('.').find(|s| s.parse::<usize>().is_err()).unwrap_or(path)
}

/// Classifies a dotted field path by its last named segment. Overrides are
/// matched against the full path first, then the field name.
pub fn classify_field(path: &str, overrides: &BTreeMap<String, FieldClass>) -> FieldClass {
    let name = field_name(path);
    if let Some(c) = overrides.get(path).or_else(|| overrides.get(name)) {
        return *c;
    }
    if name.ends_with("_at") || name.ends_with("_time") || matches!(name, "timestamp" | "uuid" | "token") {
        FieldClass::Skip
    } else if matches!(name, "description" | "message" | "note" | "content") {
        FieldClass::Semantic
    } else {
        FieldClass::Exact
    }
}

fn tokens(s: &str) -> BTreeSet<String> {
    s.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Jaccard similarity of lowercase alphanumeric word sets; 1.0 when both are empty.
pub fn fuzzy_text_match(a: &str, b: &str) -> f64 {
    let (ta, tb) = (tokens(a), tokens(b));
    if ta.is_empty() && tb.is_empty() {
        return 1.0;
    }
    let inter = ta.intersection(&tb).count();
    let union = ta.union(&tb).count();
    inter as f64 / union as f64
}

/// Leaf paths of a JSON value. Empty containers count as leaves.
pub fn flatten(v: &Value, prefix: &str, out: &mut BTreeMap<String, Value>) {
    let join = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(m) if !m.is_empty() => m.iter().for_each(|(k, x)| flatten(x, &join(k), out)),
        Value::Array(a) if !a.is_empty() => a.iter().enumerate().for_each(|(i, x)| flatten(x, &join(&i.to_string()), out)),
        _ => {
            out.insert(prefix.to_string(), v.clone());
        }
    }
}

pub fn entity_leaves(state: &EnvState) -> BTreeMap<String, Value> {
    let mut out = BTreeMap::new();
    let v = serde_json::to_value(&state.entities).expect("entities serialize");
    flatten(&v, "", &mut out);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateReport {
    pub score: f64,
    pub passed: usize,
    pub total: usize,
    pub checks: Vec<Check>,
}

/// Compares entity databases field by field over the union of leaf paths.
/// Skip-class fields are left out of the score; a path missing on either
/// side fails.
pub fn deep_compare(
    reference: &EnvState,
    evaluated: &EnvState,
    overrides: &BTreeMap<String, FieldClass>,
    threshold: f64,
) -> StateReport {
    let (r, e) = (entity_leaves(reference), entity_leaves(evaluated));
    let paths: BTreeSet<&String> = r.keys().chain(e.keys()).collect();
    let mut checks = Vec::new();
    if reference.domain != evaluated.domain {
        checks.push(Check::new("domain", "exact", Value::from(reference.domain.clone()), Value::from(evaluated.domain.clone()), false));
    }
    for path in paths {
        let class = classify_field(path, overrides);
        if class == FieldClass::Skip {
            continue;
        }
        let (x, y) = (r.get(path), e.get(path));
        let pass = match (x, y, class) {
            (Some(Value::String(a)), Some(Value::String(b)), FieldClass::Semantic) => fuzzy_text_match(a, b) >= threshold,
            (Some(a), Some(b), _) => a == b,
            _ => false,
        };
        checks.push(Check::new(
            path,
            class.as_str(),
            x.cloned().unwrap_or(Value::Null),
            y.cloned().unwrap_or(Value::Null),
            pass,
        ));
    }
    let passed = checks.iter().filter(|c| c.pass).count();
    let total = checks.len();
    let score = if total == 0 { 1.0 } else { passed as f64 / total as f64 };
    StateReport { score, passed, total, checks }
}
