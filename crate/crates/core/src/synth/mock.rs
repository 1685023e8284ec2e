use super::workflow::extract_json;
use crate::env::{Domain, Entity, ReservationStatus, Role, TaskSpec, Termination};
use crate::policy::{render, AirlineAgentBrain, ChatBackend, ChatMessage, ClientError, HeuristicPolicy, ScenarioUserBrain, Transcript};
use crate::rollout::{run_episode, RolloutConfig};
use crate::util::{fnv1a, mix_seed};
use crate::verifier::extract_function_calls;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::BTreeMap;

/// Scripted defects. Each one is fixed by the matching `Constraint (…)`
/// line in the worker prompt unless `ignore_constraints` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockKnobs {
    /// UserIntent references a nonexistent user on every third instance
    /// while the prompt version is below this.
    pub fail_until_version: u32,
    /// Known information omits the user id on instances with
    /// `index % period == 3`; 0 disables.
    pub incomplete_info_period: usize,
    /// UserIntent drops a required field from this instance index on.
    pub schema_errors_after: Option<usize>,
    pub ignore_constraints: bool,
    /// The judge answers in prose instead of JSON.
    pub unresponsive_judge: bool,
}

impl Default for MockKnobs {
    fn default() -> Self {
        MockKnobs {
            fail_until_version: 2,
            incomplete_info_period: 7,
            schema_errors_after: None,
            ignore_constraints: false,
            unresponsive_judge: false,
        }
    }
}

pub const INTENTS: [&str; 7] = ["cancel", "baggage", "change", "note", "compensation", "book", "status"];

/// Deterministic stand-in for a chat model. Scenario proposals come from a
/// pool it precomputes by playing each candidate through the heuristic
/// brains, so what it proposes is usually solvable, the way a capable
/// model's proposals usually are.
#[derive(Clone, Debug)]
pub struct MockBackend {
    knobs: MockKnobs,
    pool: Vec<Value>,
}

fn reason_and_must(intent: &str, p: &BTreeMap<&str, String>) -> (String, Vec<&'static str>) {
    let g = |k: &str| p.get(k).cloned().unwrap_or_default();
    match intent {
        "cancel" => ("I need to cancel one of my upcoming trips.".into(), vec!["cancel_reservation"]),
        "baggage" => ("I'd like to add 1 checked bag to my trip.".into(), vec!["update_reservation_baggages"]),
        "change" => (format!("I need to change my flight to {}.", g("new_date")), vec!["update_reservation_flights"]),
        "note" => (format!("Please add a note \"{}\" to my trip.", g("note")), vec!["add_travel_note"]),
        "compensation" => ("My flight was disrupted and I would like compensation.".into(), vec!["send_certificate"]),
        "book" => (
            format!("I want to book a one-way economy flight from {} to {} on {} for 1 passenger.", g("origin"), g("destination"), g("date")),
            vec!["book_reservation"],
        ),
        _ => (format!("What is the status of flight {} on {}?", g("flight_number"), g("date")), vec!["get_flight_status"]),
    }
}

fn focuses(intent: &str) -> Vec<&'static str> {
    match intent {
        "cancel" => vec!["cancel_already_flown", "cancellation_24h"],
        "baggage" => vec!["basic_economy_mod", "baggage_add_only"],
        "change" => vec!["basic_economy_mod"],
        "compensation" => vec!["compensation_membership"],
        "book" => vec!["passenger_max_5", "gift_card_limit", "certificate_limit"],
        _ => vec![],
    }
}

const NOTES: [&str; 3] = ["wheelchair assistance requested", "traveling with an infant", "vegetarian meal preference"];

fn known_info(seed: &Value, with_user: bool) -> String {
    let mut parts = Vec::new();
    if with_user {
        parts.push(format!("My user id is {}.", s(seed, "user_id")));
    }
    if let Some(r) = seed.get("reservation_id").and_then(Value::as_str) {
        parts.push(format!("The reservation id is {r}."));
    }
    if let Some(d) = seed.get("dob").and_then(Value::as_str) {
        parts.push(format!("I was born {d}."));
    }
    parts.join(" ")
}

fn s<'a>(v: &'a Value, k: &str) -> &'a str {
    v.get(k).and_then(Value::as_str).unwrap_or_default()
}

/// Task JSON as the intent worker would write it, defect free.
fn task_from_seed(seed: &Value) -> Value {
    let intent = s(seed, "intent");
    let mut params = serde_json::Map::new();
    for k in ["user_id", "reservation_id", "flight_number"] {
        if let Some(v) = seed.get(k).filter(|v| v.is_string()) {
            params.insert(k.into(), v.clone());
        }
    }
    json!({
        "context": format!("Customer {} contacts airline support ({intent}).", s(seed, "user_id")),
        "purpose": intent,
        "reason_for_call": s(seed, "reason_for_call"),
        "known_info": known_info(seed, true),
        "task_instructions": "Pursue the request until it is resolved. Answer identity questions from your known information. Accept a refusal politely.",
        "rubrics": format!("The agent completes the {intent} request within policy."),
        "must_have_functions": seed.get("must_have_functions").cloned().unwrap_or(json!([])),
        "selected_parameters": params,
    })
}

impl MockBackend {
    pub fn new(domain: &Domain) -> Self {
        Self::with_knobs(domain, MockKnobs::default())
    }

    pub fn with_knobs(domain: &Domain, knobs: MockKnobs) -> Self {
        MockBackend { knobs, pool: build_pool(domain) }
    }

    pub fn knobs(&self) -> &MockKnobs {
        &self.knobs
    }

    /// Number of solvable scenario seeds known to the mock.
    pub fn pool_size(&self) -> usize {
        self.pool.len()
    }

    fn fixed(&self, prompt: &str, category: &str) -> bool {
        !self.knobs.ignore_constraints && prompt.contains(&format!("Constraint ({category})"))
    }

    fn respond(&self, worker: &str, prompt: &str, messages: &[ChatMessage]) -> Result<String, ClientError> {
        if worker == "Trajectory" || worker == "UserSimulator" {
            let role = if worker == "Trajectory" { Role::Agent } else { Role::User };
            let t = Transcript::from_messages(messages, role);
            let action = match role {
                Role::Agent => AirlineAgentBrain::decide(&t),
                Role::User => ScenarioUserBrain::decide(&t),
            };
            return Ok(render(&action));
        }
        let payload = messages
            .last()
            .and_then(|m| extract_json(&m.content))
            .ok_or_else(|| ClientError::BadResponse("mock expects a JSON payload".into()))?;
        let idx = payload.get("instance_index").and_then(Value::as_u64).unwrap_or(0) as usize;
        let out = match worker {
            "Planner" => json!({ "stages": super::Stage::CANONICAL.iter().map(|s| format!("{s:?}")).collect::<Vec<_>>() }),
            "PromptEngineer" => self.prompt_engineer(&payload),
            "RandomPool" => self.random_pool(prompt, &payload),
            "UserIntent" => {
                let seed = payload.get("scenario_seed").cloned().unwrap_or(Value::Null);
                let version = payload.get("prompt_version").and_then(Value::as_u64).unwrap_or(1) as u32;
                let mut task = task_from_seed(&seed);
                if version < self.knobs.fail_until_version && idx % 3 == 0 {
                    let ghost = format!("ghost_user_{:04}", fnv1a(s(&seed, "scenario_id").as_bytes()) % 10_000);
                    task["selected_parameters"]["user_id"] = json!(ghost);
                    task["known_info"] = json!(known_info(&seed, true).replace(s(&seed, "user_id"), &ghost));
                }
                let period = self.knobs.incomplete_info_period;
                if period > 0 && idx % period == 3 && !self.fixed(prompt, "incomplete_known_info") {
                    task["known_info"] = json!(known_info(&seed, false));
                }
                if self.knobs.schema_errors_after.is_some_and(|n| idx >= n) && !self.fixed(prompt, "schema_error") {
                    task.as_object_mut().expect("object").remove("reason_for_call");
                }
                task
            }
            "TaskValidation" => {
                let plan = payload.pointer("/scenario_seed/solution_plan").cloned().unwrap_or(json!([]));
                json!({ "verdict": "FEASIBLE", "solution_plan": plan })
            }
            "TrajectoryValidation" => {
                let mut issues = Vec::new();
                if payload.get("termination").and_then(Value::as_str) == Some("out_of_scope") {
                    issues.push(json!({ "category": "incomplete_known_info", "description": "the user could not supply a requested identifier" }));
                }
                let calls = payload.get("calls").and_then(Value::as_array).cloned().unwrap_or_default();
                for f in payload.get("must_have_functions").and_then(Value::as_array).into_iter().flatten() {
                    if !calls.iter().any(|c| c.get("name") == Some(f) && c.get("ok") == Some(&json!(true))) {
                        issues.push(json!({ "category": "missing_required_call", "description": format!("{} was not completed", f.as_str().unwrap_or("?")) }));
                    }
                }
                json!({ "verdict": if issues.is_empty() { "PASS" } else { "FAIL" }, "issues": issues })
            }
            "Modify" => {
                let seed = payload.get("scenario_seed").cloned().unwrap_or(Value::Null);
                let clean = task_from_seed(&seed);
                let mut task = payload.get("task").filter(|t| t.is_object()).cloned().unwrap_or_else(|| json!({}));
                let cats: Vec<&str> = payload
                    .get("issues")
                    .and_then(Value::as_array)
                    .into_iter()
                    .flatten()
                    .filter_map(|i| i.get("category").and_then(Value::as_str))
                    .collect();
                let obj = task.as_object_mut().expect("object");
                for (k, v) in clean.as_object().expect("object") {
                    let blank = obj.get(k).map_or(true, |x| x.as_str().is_some_and(|t| t.trim().is_empty()));
                    if blank {
                        obj.insert(k.clone(), v.clone());
                    }
                }
                if cats.contains(&"incomplete_known_info") {
                    obj.insert("known_info".into(), clean["known_info"].clone());
                }
                json!({ "task": task })
            }
            "VerificationFunction" => {
                let intent = payload.pointer("/task/purpose").and_then(Value::as_str).unwrap_or_default();
                json!({ "policy_focuses": focuses(intent), "field_overrides": {} })
            }
            "Judge" => {
                if self.knobs.unresponsive_judge {
                    return Ok("These samples look reasonable overall.".into());
                }
                judge(&payload)
            }
            other => return Err(ClientError::BadResponse(format!("mock has no worker {other}"))),
        };
        Ok(out.to_string())
    }

    fn random_pool(&self, prompt: &str, payload: &Value) -> Value {
        let focus: Vec<&str> = prompt
            .lines()
            .find_map(|l| l.strip_prefix("Focus:"))
            .map(|f| f.split(',').map(str::trim).collect())
            .unwrap_or_default();
        let mut pool: Vec<&Value> = self.pool.iter().filter(|c| focus.contains(&s(c, "intent"))).collect();
        if pool.is_empty() {
            pool = self.pool.iter().collect();
        }
        if pool.is_empty() {
            return json!({ "error": "no scenario fits this domain" });
        }
        let seed = payload.get("seed").and_then(Value::as_u64).unwrap_or(0);
        let set = payload.get("set_id").and_then(Value::as_u64).unwrap_or(0);
        let mut pick = pool[(mix_seed(seed, set) % pool.len() as u64) as usize].clone();
        pick["instance_index"] = payload.get("instance_index").cloned().unwrap_or(json!(0));
        pick
    }

    fn prompt_engineer(&self, payload: &Value) -> Value {
        match payload.get("mode").and_then(Value::as_str) {
            Some("diversify") => {
                let k = payload.get("k_index").and_then(Value::as_u64).unwrap_or(0) as usize;
                let focus: Vec<&str> = (0..4).map(|i| INTENTS[(k * 3 + i) % INTENTS.len()]).collect();
                json!({
                    "summary": format!("Set {k}: focus on {}", focus.join(", ")),
                    "addenda": { "RandomPool": format!("Focus: {}", focus.join(", ")) },
                })
            }
            _ => {
                let mut revisions = Vec::new();
                for f in payload.get("findings").and_then(Value::as_array).into_iter().flatten() {
                    let cat = s(f, "category");
                    let (worker, text) = match cat {
                        "missing_resource" => ("UserIntent", "reference only users, reservations and flights present in the database."),
                        "incomplete_known_info" => ("UserIntent", "known information must contain every identifier the agent will ask for."),
                        "schema_error" => ("UserIntent", "emit every required scenario field."),
                        "policy_violation" => ("UserIntent", "request only actions the policy permits."),
                        "missing_required_call" | "dialog_failure" => ("Trajectory", "complete every required action before closing the conversation."),
                        _ => ("UserIntent", "keep scenarios consistent with the database and policy."),
                    };
                    revisions.push(json!({ "worker": worker, "text": format!("Constraint ({cat}): {text}") }));
                    if cat == "missing_resource" {
                        revisions.push(json!({ "worker": "UserIntent", "text": format!("Negative example (missing_resource): {}", s(f, "evidence")) }));
                    }
                }
                json!({ "revisions": revisions })
            }
        }
    }
}

fn describe(category: &str) -> &'static str {
    match category {
        "missing_resource" => "scenarios reference entities absent from the database",
        "incomplete_known_info" => "users lack identifiers the agent needs",
        "schema_error" => "scenario output misses required fields",
        "missing_required_call" => "dialogues end before the required action",
        "policy_violation" => "requested actions break domain policy",
        "contradictory_constraints" => "task constraints cannot be met together",
        "dialog_failure" => "dialogues end in errors or run out of turns",
        _ => "other defect",
    }
}

fn judge(payload: &Value) -> Value {
    let items = payload.get("instances").and_then(Value::as_array).cloned().unwrap_or_default();
    let n = items.len().max(1) as f64;
    let status = |i: &Value| s(i, "status").to_string();
    let infeasible = items.iter().filter(|i| status(i) == "infeasible").count() as f64;
    let (ok, total) = items.iter().fold((0u64, 0u64), |(a, b), i| {
        (a + i.get("tool_ok").and_then(Value::as_u64).unwrap_or(0), b + i.get("tool_total").and_then(Value::as_u64).unwrap_or(0))
    });
    let coherence = items
        .iter()
        .map(|i| {
            if status(i) == "accepted" {
                1.0 / (1.0 + i.get("repair_count").and_then(Value::as_f64).unwrap_or(0.0))
            } else {
                0.0
            }
        })
        .sum::<f64>()
        / n;
    let intents: std::collections::BTreeSet<&str> = items.iter().map(|i| s(i, "intent")).collect();
    let coverage = (intents.len() as f64 / items.len().clamp(1, 4) as f64).min(1.0);
    let mut by_cat: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for i in &items {
        for c in i.get("categories").and_then(Value::as_array).into_iter().flatten().filter_map(Value::as_str) {
            by_cat.entry(c.to_string()).or_default().push(s(i, "id").to_string());
        }
    }
    let findings: Vec<Value> = by_cat
        .iter()
        .map(|(c, ids)| {
            json!({
                "category": c,
                "description": describe(c),
                "evidence": format!("{} of {} instances: {}", ids.len(), items.len(), ids.join(", ")),
            })
        })
        .collect();
    json!({
        "scores": {
            "executability": 1.0 - infeasible / n,
            "tool_correctness": if total == 0 { 1.0 } else { ok as f64 / total as f64 },
            "trajectory_coherence": coherence,
            "difficulty_coverage": coverage,
        },
        "findings": findings,
    })
}

impl ChatBackend for MockBackend {
    fn complete(&self, messages: &[ChatMessage], _temperature: f64) -> Result<String, ClientError> {
        let system = messages.first().map(|m| m.content.as_str()).unwrap_or_default();
        let (head, prompt) = system.split_once('\n').unwrap_or((system, ""));
        let worker = head
            .strip_prefix("Worker: ")
            .ok_or_else(|| ClientError::BadResponse("system message lacks a worker line".into()))?;
        self.respond(worker.trim(), prompt, messages)
    }
}

/// Candidate seeds, kept only when the heuristic brains solve them cleanly.
fn build_pool(domain: &Domain) -> Vec<Value> {
    let state = domain.base_state(0);
    let mut raw: Vec<(String, BTreeMap<&str, String>)> = Vec::new();
    let flights: Vec<_> = state
        .entities
        .values()
        .filter_map(|e| if let Entity::Flight(f) = e { Some(f) } else { None })
        .collect();
    let users: Vec<_> = state
        .entities
        .values()
        .filter_map(|e| if let Entity::User(u) = e { Some(u) } else { None })
        .collect();
    for (ui, u) in users.iter().enumerate() {
        let base = |extra: &[(&'static str, String)]| {
            let mut p: BTreeMap<&str, String> = BTreeMap::new();
            p.insert("user_id", u.user_id.clone());
            for (k, v) in extra {
                p.insert(k, v.clone());
            }
            p
        };
        for rid in &u.reservations {
            let Some(Entity::Reservation(r)) = state.entities.get(rid) else { continue };
            if r.status == ReservationStatus::Cancelled {
                continue;
            }
            let res = ("reservation_id", rid.clone());
            for intent in ["cancel", "baggage", "compensation"] {
                raw.push((intent.into(), base(&[res.clone()])));
            }
            raw.push(("note".into(), base(&[res.clone(), ("note", NOTES[ui % NOTES.len()].to_string())])));
            if let [seg] = r.flights.as_slice() {
                if let Ok(d) = chrono::NaiveDate::parse_from_str(&seg.date, "%Y-%m-%d") {
                    for days in [1, 2] {
                        let nd = (d + chrono::Duration::days(days)).format("%Y-%m-%d").to_string();
                        raw.push(("change".into(), base(&[res.clone(), ("new_date", nd)])));
                    }
                }
            }
            if let Some(seg) = r.flights.first() {
                raw.push((
                    "status".into(),
                    base(&[("flight_number", seg.flight_number.clone()), ("date", seg.date.clone())]),
                ));
            }
        }
        let dob = format!("19{}-0{}-1{}", 70 + ui % 25, 1 + ui % 9, ui % 10);
        let mut booked = 0;
        for (fi, f) in flights.iter().enumerate().skip(ui % flights.len().max(1)) {
            if booked == 2 || fi % 3 != 0 {
                continue;
            }
            if let Some((date, _)) = f.dates.iter().find(|(d, x)| d.as_str() >= "2024-05-16" && x.available_seats.as_ref().is_some_and(|s| s.economy > 0)) {
                raw.push((
                    "book".into(),
                    base(&[
                        ("origin", f.origin.clone()),
                        ("destination", f.destination.clone()),
                        ("date", date.clone()),
                        ("dob", dob.clone()),
                    ]),
                ));
                booked += 1;
            }
        }
    }

    let cfg = RolloutConfig { max_turns: 30, ..RolloutConfig::default() };
    let mut pool = Vec::new();
    for (intent, p) in raw {
        let (reason, must) = reason_and_must(&intent, &p);
        let key: Vec<String> = p.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let mut seed = json!({
            "scenario_id": format!("{intent}:{}", key.join(";")),
            "intent": intent,
            "reason_for_call": reason,
            "must_have_functions": must,
            "policy_focuses": focuses(&intent),
        });
        for (k, v) in &p {
            if matches!(*k, "user_id" | "reservation_id" | "flight_number" | "dob") {
                seed[*k] = json!(v);
            }
        }
        let task: TaskSpec = match serde_json::from_value(task_from_seed(&seed)) {
            Ok(t) => t,
            Err(_) => continue,
        };
        let t = run_episode(domain, &task, &mut HeuristicPolicy::agent(), &mut HeuristicPolicy::user(), &cfg, 0);
        let calls = extract_function_calls(&t);
        let clean = t.termination == Termination::UserStop
            && calls.iter().all(|c| c.ok)
            && must.iter().all(|m| calls.iter().any(|c| c.name == *m));
        if clean {
            seed["solution_plan"] = json!(calls.iter().map(|c| json!({ "name": c.name, "arguments": c.arguments })).collect::<Vec<_>>());
            pool.push(seed);
        }
    }
    pool
}
