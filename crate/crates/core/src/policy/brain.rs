//! Rule-based dialogue brains. They read a transcript, never a hidden
//! state, so the same logic drives both the heuristic policies and the
//! synthesis mock backend (which only sees chat messages).

use super::parse::{parse_output, render};
use super::{check_role, ChatMessage, ParsedAction, Payload, Policy, PolicyError, PolicyOutput};
use crate::env::{ControlSignal, HistoryEntry, Observation, Role};
use regex::Regex;
use serde_json::{json, Map, Value};
use std::sync::OnceLock;

#[derive(Clone, Debug, PartialEq)]
pub enum TranscriptEntry {
    Said { role: Role, text: String },
    Called { caller: Role, name: String, arguments: Map<String, Value> },
    Returned { name: String, ok: bool, output: String },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Transcript {
    pub system: String,
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn from_observation(obs: &Observation) -> Self {
        let entries = obs
            .history
            .iter()
            .filter_map(|e| match e {
                HistoryEntry::Message { role, text } => Some(TranscriptEntry::Said { role: *role, text: text.clone() }),
                HistoryEntry::ToolCall { caller, name, arguments } => {
                    Some(TranscriptEntry::Called { caller: *caller, name: name.clone(), arguments: arguments.clone() })
                }
                HistoryEntry::ToolResult { name, ok, output, .. } => {
                    Some(TranscriptEntry::Returned { name: name.clone(), ok: *ok, output: output.clone() })
                }
                HistoryEntry::Signal { .. } => None,
            })
            .collect();
        Transcript { system: obs.system_context.clone(), entries }
    }

    /// Inverse of [`super::observation_messages`] as seen by `me`.
    pub fn from_messages(messages: &[ChatMessage], me: Role) -> Self {
        static RESULT: OnceLock<Regex> = OnceLock::new();
        static CALL: OnceLock<Regex> = OnceLock::new();
        let result = RESULT.get_or_init(|| Regex::new(r"(?s)^Tool result \(([^,]+), (ok|error)\): (.*)$").unwrap());
        let call = CALL.get_or_init(|| Regex::new(r"(?s)^\[(agent|user) tool call\] (\S+) (.*)$").unwrap());
        let mut t = Transcript::default();
        for (i, m) in messages.iter().enumerate() {
            match m.role.as_str() {
                "system" if i == 0 => t.system = m.content.clone(),
                "assistant" => {
                    let p = parse_output(me, &m.content);
                    t.entries.push(match p.payload {
                        Payload::Function { name, arguments } => TranscriptEntry::Called { caller: me, name, arguments },
                        Payload::Message { text } | Payload::Answer { text } => TranscriptEntry::Said { role: me, text },
                        Payload::Signal { residual, .. } => TranscriptEntry::Said { role: me, text: residual },
                        Payload::Malformed { .. } => TranscriptEntry::Said { role: me, text: m.content.clone() },
                    });
                }
                _ => {
                    if let Some(c) = result.captures(&m.content) {
                        t.entries.push(TranscriptEntry::Returned {
                            name: c[1].to_string(),
                            ok: &c[2] == "ok",
                            output: c[3].to_string(),
                        });
                    } else if let Some(c) = call.captures(&m.content) {
                        let caller = if &c[1] == "agent" { Role::Agent } else { Role::User };
                        let arguments = serde_json::from_str(&c[3]).unwrap_or_default();
                        t.entries.push(TranscriptEntry::Called { caller, name: c[2].to_string(), arguments });
                    } else if !m.content.starts_with('[') {
                        t.entries.push(TranscriptEntry::Said { role: me.other(), text: m.content.clone() });
                    }
                }
            }
        }
        t
    }

    pub fn said(&self, role: Role) -> Vec<&str> {
        self.entries
            .iter()
            .filter_map(|e| match e {
                TranscriptEntry::Said { role: r, text } if *r == role => Some(text.as_str()),
                _ => None,
            })
            .collect()
    }

    /// The other party's latest message, if it came after `me` last spoke.
    pub fn pending_from(&self, me: Role) -> Option<&str> {
        for e in self.entries.iter().rev() {
            if let TranscriptEntry::Said { role, text } = e {
                return (*role != me).then_some(text.as_str());
            }
        }
        None
    }

    /// Result of the first call matching `name` and `args`, if attempted.
    fn result_of(&self, name: &str, args: &Map<String, Value>) -> Option<(bool, &str)> {
        let mut pending = false;
        for e in &self.entries {
            match e {
                TranscriptEntry::Called { name: n, arguments, .. } => pending = n == name && arguments == args,
                TranscriptEntry::Returned { name: n, ok, output } if pending && n == name => {
                    return Some((*ok, output.as_str()))
                }
                _ => {}
            }
        }
        None
    }
}

fn re(cell: &'static OnceLock<Regex>, pat: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pat).expect("static pattern"))
}

fn user_id_in(text: &str) -> Option<String> {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"\b[a-z]+_[a-z]+_\d{4}\b").find(text).map(|m| m.as_str().to_string())
}

fn reservation_in(text: &str) -> Option<String> {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"\b[A-Z0-9]{6}\b")
        .find_iter(text)
        .map(|m| m.as_str())
        .find(|s| s.chars().any(|c| c.is_ascii_alphabetic()) && s.chars().any(|c| c.is_ascii_digit()) && !s.starts_with("HAT"))
        .map(str::to_string)
}

fn order_in(text: &str) -> Option<String> {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"\bORD-\d+\b").find(text).map(|m| m.as_str().to_string())
}

fn dates_in(text: &str) -> Vec<String> {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"\b\d{4}-\d{2}-\d{2}\b").find_iter(text).map(|m| m.as_str().to_string()).collect()
}

fn dob_in(text: &str) -> Option<String> {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"(?:born|birth:?)\s+(?:on\s+)?(\d{4}-\d{2}-\d{2})").captures(text).map(|c| c[1].to_string())
}

fn route_in(text: &str) -> Option<(String, String)> {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"\bfrom ([A-Z]{3}) to ([A-Z]{3})\b").captures(text).map(|c| (c[1].to_string(), c[2].to_string()))
}

fn count_before(text: &str, noun: &str) -> Option<u32> {
    let pat = format!(r"(\d+) (?:more |extra |additional |checked )*{noun}");
    Regex::new(&pat).ok()?.captures(text).and_then(|c| c[1].parse().ok())
}

fn quoted_in(text: &str) -> Option<String> {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r#""([^"]+)""#).captures(text).map(|c| c[1].to_string())
}

fn today_in(system: &str) -> Option<String> {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"current time is (\d{4}-\d{2}-\d{2}) (\d{2}:\d{2})").captures(system).map(|c| format!("{}T{}:00", &c[1], &c[2]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Intent {
    Refund,
    Compensation,
    Note,
    Cancel,
    Baggage,
    ChangeFlight,
    Book,
    Status,
}

fn detect_intent(text: &str) -> Option<Intent> {
    let l = text.to_lowercase();
    let table = [
        (Intent::Refund, "refund", order_in(text).is_some()),
        (Intent::Compensation, "compensation", true),
        (Intent::Compensation, "certificate", true),
        (Intent::Note, "note", true),
        (Intent::Cancel, "cancel", true),
        (Intent::Baggage, "bag", true),
        (Intent::ChangeFlight, "change", true),
        (Intent::ChangeFlight, "move", true),
        (Intent::Book, "book", true),
        (Intent::Status, "status", true),
    ];
    table.iter().find(|(_, kw, extra)| *extra && l.contains(kw)).map(|(i, _, _)| *i)
}

fn say(think: &str, text: impl Into<String>) -> ParsedAction {
    ParsedAction::new(Some(think.to_string()), Payload::Message { text: text.into() })
}

fn call(name: &str, arguments: Value) -> ParsedAction {
    let mut a = ParsedAction::function(name, arguments);
    a.think = Some(format!("Next step: {name}."));
    a
}

fn obj(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => Map::new(),
    }
}

/// Either the output of an already executed call or the action to take now.
fn ensure(t: &Transcript, name: &str, args: Value) -> Result<Value, ParsedAction> {
    let map = obj(args.clone());
    match t.result_of(name, &map) {
        None => Err(call(name, args)),
        Some((true, out)) => Ok(serde_json::from_str(out).unwrap_or(Value::Null)),
        Some((false, out)) => {
            let detail = serde_json::from_str::<Value>(out)
                .ok()
                .and_then(|v| v.get("detail").and_then(Value::as_str).map(str::to_string))
                .unwrap_or_else(|| out.to_string());
            Err(say("The call failed; explain.", format!("I'm sorry, I couldn't complete that: {detail}")))
        }
    }
}

fn sorry(text: impl Into<String>) -> ParsedAction {
    say("This request is not allowed; decline.", format!("I'm sorry, {}", text.into()))
}

fn done(text: impl Into<String>) -> ParsedAction {
    say("The request is complete; confirm.", format!("All set! {}", text.into()))
}

fn s<'a>(v: &'a Value, key: &str) -> &'a str {
    v.get(key).and_then(Value::as_str).unwrap_or_default()
}

fn n(v: &Value, key: &str) -> i64 {
    v.get(key).and_then(Value::as_i64).unwrap_or(0)
}

/// Customer-service agent for the airline and refund-desk fixtures.
pub struct AirlineAgentBrain;

impl AirlineAgentBrain {
    pub fn decide(t: &Transcript) -> ParsedAction {
        match Self::plan(t) {
            Ok(a) | Err(a) => a,
        }
    }

    fn plan(t: &Transcript) -> Result<ParsedAction, ParsedAction> {
        let said = t.said(Role::User);
        if said.is_empty() {
            return Ok(say("Open the conversation.", "Hello! How can I help you today?"));
        }
        let all = said.join("\n");
        let Some(intent) = detect_intent(&all) else {
            return Ok(say("The request is unclear.", "Could you tell me what you need help with today?"));
        };
        if intent == Intent::Refund {
            let order = order_in(&all).expect("refund intent carries an order id");
            ensure(t, "issue_refund", json!({ "order_id": order }))?;
            return Ok(done(format!("Order {order} has been refunded.")));
        }
        let Some(uid) = said.iter().rev().find_map(|x| user_id_in(x)) else {
            return Ok(say("Identity first.", "Could you please provide your user id so I can verify your account?"));
        };
        let user = ensure(t, "get_user_details", json!({ "user_id": uid }))?;
        let card = user
            .get("payment_methods")
            .and_then(Value::as_object)
            .and_then(|m| {
                m.values()
                    .find(|p| s(p, "source") == "credit_card")
                    .or_else(|| m.values().find(|p| s(p, "source") == "gift_card"))
            })
            .map(|p| s(p, "id").to_string())
            .unwrap_or_default();
        match intent {
            Intent::Book => return Self::book(t, &all, &uid, &user, &card),
            Intent::Status => {
                let flight = Regex::new(r"\bHAT\d{3}\b").unwrap().find(&all).map(|m| m.as_str().to_string());
                let (Some(flight), Some(date)) = (flight, dates_in(&all).pop()) else {
                    return Ok(say("Need flight and date.", "Which flight number and date should I check?"));
                };
                let st = ensure(t, "get_flight_status", json!({ "flight_number": flight, "date": date }))?;
                return Ok(done(format!("Flight {flight} on {date} is {}.", s(&st, "status"))));
            }
            _ => {}
        }
        let Some(res_id) = said.iter().rev().find_map(|x| reservation_in(x)) else {
            return Ok(say("Need the reservation.", "Which reservation id is this about?"));
        };
        let r = ensure(t, "get_reservation_details", json!({ "reservation_id": res_id }))?;
        if s(&r, "user_id") != uid {
            return Ok(sorry("that reservation is not on your account."));
        }
        if s(&r, "status") == "cancelled" {
            return Ok(sorry(format!("reservation {res_id} is already cancelled.")));
        }
        let cabin = s(&r, "cabin").to_string();
        let segments: Vec<Value> = r.get("flights").and_then(Value::as_array).cloned().unwrap_or_default();
        let pax = r.get("passengers").and_then(Value::as_array).map(Vec::len).unwrap_or(1) as i64;
        match intent {
            Intent::Cancel => {
                let today = today_in(&t.system).unwrap_or_default();
                if segments.iter().any(|seg| s(seg, "date") < &today[..today.len().min(10)]) {
                    ensure(t, "transfer_to_human_agents", json!({ "summary": format!("User {uid} wants to cancel {res_id}, which has a flown segment.") }))?;
                    return Ok(sorry("part of this trip has already been flown, so I'm transferring you to a human agent."));
                }
                let recent = today_in(&t.system)
                    .and_then(|now| {
                        let now = chrono::NaiveDateTime::parse_from_str(&now, "%Y-%m-%dT%H:%M:%S").ok()?;
                        let made = chrono::NaiveDateTime::parse_from_str(s(&r, "created_at"), "%Y-%m-%dT%H:%M:%S").ok()?;
                        Some(now.signed_duration_since(made).num_hours() < 24)
                    })
                    .unwrap_or(false);
                let mut allowed = recent || cabin == "business" || r.get("insurance") == Some(&Value::Bool(true));
                if !allowed {
                    for seg in &segments {
                        let st = ensure(t, "get_flight_status", json!({ "flight_number": s(seg, "flight_number"), "date": s(seg, "date") }))?;
                        allowed |= s(&st, "status") == "cancelled";
                    }
                }
                if !allowed {
                    return Ok(sorry("this reservation is not eligible for cancellation under our policy."));
                }
                ensure(t, "cancel_reservation", json!({ "reservation_id": res_id, "reason": "change of plan" }))?;
                Ok(done(format!("Reservation {res_id} has been cancelled and refunds go back to the original payment methods.")))
            }
            Intent::Baggage => {
                if cabin == "basic_economy" {
                    return Ok(sorry("basic economy reservations cannot be modified."));
                }
                let add = count_before(&all, "bag").unwrap_or(1) as i64;
                ensure(
                    t,
                    "update_reservation_baggages",
                    json!({
                        "reservation_id": res_id,
                        "total_baggages": n(&r, "total_baggages") + add,
                        "nonfree_baggages": n(&r, "nonfree_baggages") + add,
                        "payment_id": card,
                    }),
                )?;
                Ok(done(format!("I added {add} checked bag(s) to reservation {res_id}.")))
            }
            Intent::Note => {
                let Some(note) = said.iter().rev().find_map(|x| quoted_in(x)) else {
                    return Ok(say("Need the note text.", "What should the note say? Please put it in quotes."));
                };
                ensure(t, "add_travel_note", json!({ "reservation_id": res_id, "note": note }))?;
                Ok(done(format!("The note has been added to reservation {res_id}.")))
            }
            Intent::Compensation => {
                let mut disrupted = None;
                for seg in &segments {
                    let st = ensure(t, "get_flight_status", json!({ "flight_number": s(seg, "flight_number"), "date": s(seg, "date") }))?;
                    if matches!(s(&st, "status"), "delayed" | "cancelled") {
                        disrupted = Some(s(&st, "status").to_string());
                        break;
                    }
                }
                let Some(status) = disrupted else {
                    return Ok(sorry("your flights operated as scheduled, so no compensation applies."));
                };
                if s(&user, "membership") == "regular" {
                    return Ok(sorry("compensation is only available to silver and gold members."));
                }
                let amount = pax * if status == "cancelled" { 100 } else { 50 };
                ensure(t, "send_certificate", json!({ "user_id": uid, "amount": amount }))?;
                Ok(done(format!("I issued a {amount} travel certificate for the {status} flight.")))
            }
            Intent::ChangeFlight => {
                if cabin == "basic_economy" {
                    return Ok(sorry("basic economy reservations cannot be modified."));
                }
                let [seg] = segments.as_slice() else {
                    return Ok(sorry("I can only move single-flight reservations here."));
                };
                let Some(date) = dates_in(&all).into_iter().rfind(|d| d != s(seg, "date")) else {
                    return Ok(say("Need the new date.", "Which date would you like to move to?"));
                };
                let found = ensure(
                    t,
                    "search_direct_flight",
                    json!({ "origin": s(seg, "origin"), "destination": s(seg, "destination"), "date": date }),
                )?;
                let options = found.as_array().cloned().unwrap_or_default();
                let seats = |o: &Value| o.pointer(&format!("/available_seats/{cabin}")).and_then(Value::as_i64).unwrap_or(0);
                let pick = options
                    .iter()
                    .filter(|o| seats(o) >= pax)
                    .min_by_key(|o| (s(o, "flight_number") != s(seg, "flight_number"), s(o, "flight_number").to_string()));
                let Some(pick) = pick else {
                    return Ok(sorry(format!("there are no seats on that route on {date}.")));
                };
                let number = s(pick, "flight_number").to_string();
                ensure(
                    t,
                    "update_reservation_flights",
                    json!({ "reservation_id": res_id, "cabin": cabin, "flights": [{ "flight_number": number, "date": date }], "payment_id": card }),
                )?;
                Ok(done(format!("Reservation {res_id} now flies {number} on {date}.")))
            }
            _ => Ok(say("Unsupported.", "Could you tell me what you need help with today?")),
        }
    }

    fn book(t: &Transcript, all: &str, uid: &str, user: &Value, card: &str) -> Result<ParsedAction, ParsedAction> {
        let dob = dob_in(all);
        let travel_date = dates_in(all).into_iter().rfind(|d| Some(d) != dob.as_ref());
        let (Some((origin, dest)), Some(date)) = (route_in(all), travel_date) else {
            return Ok(say("Need route and date.", "Where are you flying from and to, and on what date?"));
        };
        let Some(dob) = dob else {
            return Ok(say("Need passenger details.", "What is the passenger's date of birth?"));
        };
        let l = all.to_lowercase();
        let cabin = if l.contains("basic economy") {
            "basic_economy"
        } else if l.contains("business") {
            "business"
        } else {
            "economy"
        };
        let pax = count_before(all, "passenger").unwrap_or(1).max(1) as i64;
        let found = ensure(t, "search_direct_flight", json!({ "origin": origin, "destination": dest, "date": date }))?;
        let options = found.as_array().cloned().unwrap_or_default();
        let num = |o: &Value, p: &str| o.pointer(&format!("/{p}/{cabin}")).and_then(Value::as_i64).unwrap_or(0);
        let Some(pick) = options.iter().filter(|o| num(o, "available_seats") >= pax).min_by_key(|o| num(o, "prices")) else {
            return Ok(sorry(format!("there are no direct flights from {origin} to {dest} on {date} with enough seats.")));
        };
        let first = user.pointer("/name/first_name").and_then(Value::as_str).unwrap_or_default();
        let last = user.pointer("/name/last_name").and_then(Value::as_str).unwrap_or_default();
        let passengers: Vec<Value> = (0..pax)
            .map(|i| {
                let fname = if i == 0 { first.to_string() } else { format!("Guest{i}") };
                json!({ "first_name": fname, "last_name": last, "dob": dob })
            })
            .collect();
        let total = num(pick, "prices") * pax;
        let booked = ensure(
            t,
            "book_reservation",
            json!({
                "user_id": uid,
                "origin": origin,
                "destination": dest,
                "flight_type": "one_way",
                "cabin": cabin,
                "flights": [{ "flight_number": s(pick, "flight_number"), "date": date }],
                "passengers": passengers,
                "payment_methods": [{ "payment_id": card, "amount": total }],
                "total_baggages": 0,
                "nonfree_baggages": 0,
                "insurance": false,
            }),
        )?;
        Ok(done(format!("Reservation {} is booked for {total}.", s(&booked, "reservation_id"))))
    }
}

/// Fields of the rendered user brief.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Brief {
    pub reason_for_call: String,
    pub known_info: String,
    pub task_instructions: String,
}

impl Brief {
    pub fn parse(system: &str) -> Self {
        let field = |label: &str| {
            system
                .lines()
                .find_map(|l| l.strip_prefix(label))
                .map(|x| x.trim().to_string())
                .unwrap_or_default()
        };
        Brief {
            reason_for_call: field("Reason for call:"),
            known_info: field("Known information:"),
            task_instructions: field("Task instructions:"),
        }
    }
}

const PATIENCE: usize = 8;

/// Simulated customer that pursues the brief's reason for call and answers
/// identity questions from its known information.
pub struct ScenarioUserBrain;

impl ScenarioUserBrain {
    pub fn decide(t: &Transcript) -> ParsedAction {
        let brief = Brief::parse(&t.system);
        let answer = |think: &str, text: String| ParsedAction::new(Some(think.into()), Payload::Answer { text });
        let signal = |think: &str, signal, residual: &str| {
            ParsedAction::new(Some(think.into()), Payload::Signal { signal, residual: residual.into() })
        };
        let mine = t.said(Role::User);
        if mine.is_empty() {
            return answer("State why I am calling.", brief.reason_for_call.clone());
        }
        let Some(last) = t.pending_from(Role::User) else {
            return answer("Still waiting.", "Hello? Are you still there?".into());
        };
        let l = last.to_lowercase();
        let known = &brief.known_info;
        if l.contains("transferring you") {
            return signal("I am being handed to a human.", ControlSignal::Transfer, "Okay, thank you.");
        }
        if l.contains("all set") {
            return signal("Objective complete.", ControlSignal::Stop, "Great, thanks for your help.");
        }
        if l.contains("i'm sorry") {
            return signal("The request was declined; accept it.", ControlSignal::Stop, "I understand, thanks anyway.");
        }
        if l.contains("user id") {
            return match user_id_in(known) {
                Some(u) => answer("Give my user id.", format!("My user id is {u}.")),
                None => signal("I do not have that.", ControlSignal::OutOfScope, "I don't have that handy."),
            };
        }
        if l.contains("reservation id") {
            return match reservation_in(known) {
                Some(r) => answer("Give my reservation id.", format!("It's {r}.")),
                None => signal("I do not have that.", ControlSignal::OutOfScope, "I don't have that handy."),
            };
        }
        if l.contains("date of birth") {
            return match dob_in(known) {
                Some(d) => answer("Give my date of birth.", format!("I was born {d}.")),
                None => signal("I do not have that.", ControlSignal::OutOfScope, "I don't have that handy."),
            };
        }
        if mine.len() >= PATIENCE {
            return signal("This is going nowhere.", ControlSignal::Transfer, "Please get me a human agent.");
        }
        answer("Restate the request.", format!("As I said: {}", brief.reason_for_call))
    }
}

/// Deterministic policy driven by one of the brains above.
pub struct HeuristicPolicy {
    role: Role,
}

impl HeuristicPolicy {
    pub fn agent() -> Self {
        HeuristicPolicy { role: Role::Agent }
    }

    pub fn user() -> Self {
        HeuristicPolicy { role: Role::User }
    }
}

impl Policy for HeuristicPolicy {
    fn role(&self) -> Role {
        self.role
    }

    fn id(&self) -> String {
        format!("heuristic:{}", self.role)
    }

    fn next_action(&mut self, obs: &Observation, _seed: u64) -> Result<PolicyOutput, PolicyError> {
        check_role(self.role, obs)?;
        let t = Transcript::from_observation(obs);
        let action = match self.role {
            Role::Agent => AirlineAgentBrain::decide(&t),
            Role::User => ScenarioUserBrain::decide(&t),
        };
        Ok(PolicyOutput::from_text(self.role, render(&action)))
    }
}
