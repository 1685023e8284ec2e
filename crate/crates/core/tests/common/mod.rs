#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};
use std::collections::{BTreeMap, BTreeSet};
use tooltrain::env::{Domain, EnvState, Role, RuleId, TaskSpec, ToolCall};
use tooltrain::grpo::{TokenBatch, TokenRecord};
use tooltrain::policy::{Policy, ScriptedPolicy, ToyPolicyParams};
use tooltrain::rollout::{run_episode, RolloutConfig, Trajectory};

pub fn call(name: &str, args: Value) -> ToolCall {
    ToolCall::new(name, args, Role::Agent)
}

/// A valid one-way SFO→BOS economy booking on HAT026 for `n` passengers.
pub fn booking(user: &str, n: usize, payments: Value) -> ToolCall {
    let passengers: Vec<Value> =
        (0..n).map(|i| json!({ "first_name": "Pax", "last_name": format!("N{i}"), "dob": "1990-01-01" })).collect();
    call(
        "book_reservation",
        json!({
            "user_id": user, "origin": "SFO", "destination": "BOS", "flight_type": "one_way", "cabin": "economy",
            "flights": [{ "flight_number": "HAT026", "date": "2024-05-17" }],
            "passengers": passengers, "payment_methods": payments,
            "total_baggages": 0, "nonfree_baggages": 0, "insurance": false
        }),
    )
}

/// One triggering and one passing call per rule, evaluated on the fixture state.
pub fn rule_cases() -> Vec<(RuleId, ToolCall, ToolCall)> {
    let bag = |r: &str, n: u64| call("update_reservation_baggages", json!({ "reservation_id": r, "total_baggages": n, "nonfree_baggages": 0, "payment_id": "credit_card_4421" }));
    let cancel = |r: &str| call("cancel_reservation", json!({ "reservation_id": r, "reason": "change of plan" }));
    vec![
        (RuleId::BasicEconomyMod, bag("P7XW3D", 1), bag("79CKHW", 2)),
        (RuleId::CancelAlreadyFlown, cancel("YHLGGW"), cancel("79CKHW")),
        (RuleId::Cancellation24h, cancel("F2QK9V"), cancel("W9DF4S")),
        (
            RuleId::CertificateLimit,
            booking("mei_thomas_8446", 1, json!([{ "payment_id": "certificate_3221", "amount": 100 }, { "payment_id": "certificate_7745", "amount": 110 }])),
            booking("mei_thomas_8446", 1, json!([{ "payment_id": "certificate_3221", "amount": 210 }])),
        ),
        (
            RuleId::GiftCardLimit,
            booking("aisha_patel_5093", 1, json!(["gift_card_3001", "gift_card_3002", "gift_card_3003", "gift_card_3004"].map(|g| json!({ "payment_id": g, "amount": 1 })))),
            booking("aisha_patel_5093", 1, json!(["gift_card_3001", "gift_card_3002", "gift_card_3003"].map(|g| json!({ "payment_id": g, "amount": 1 })))),
        ),
        (
            RuleId::PassengerMax5,
            booking("mei_thomas_8446", 6, json!([])),
            booking("mei_thomas_8446", 5, json!([])),
        ),
        (RuleId::BaggageAddOnly, bag("B3VC7K", 2), bag("B3VC7K", 4)),
        (
            RuleId::CompensationMembership,
            call("send_certificate", json!({ "user_id": "sofia_kim_7340", "amount": 50 })),
            call("send_certificate", json!({ "user_id": "mei_thomas_8446", "amount": 50 })),
        ),
    ]
}

pub fn approx(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// ---------------------------------------------------------------- metrics

/// Every k-subset of `0..n`.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n).filter(|m| m.count_ones() as usize == k).map(|m| (0..n).filter(|i| m & (1 << i) != 0).collect()).collect()
}

/// Fractions of k-subsets of one task's trials that are all-success / any-success.
pub fn subset_oracle(outcomes: &[bool], k: usize) -> (f64, f64) {
    let subs = subsets(outcomes.len(), k);
    let all = subs.iter().filter(|s| s.iter().all(|&i| outcomes[i])).count();
    let any = subs.iter().filter(|s| s.iter().any(|&i| outcomes[i])).count();
    (all as f64 / subs.len() as f64, any as f64 / subs.len() as f64)
}

// --------------------------------------------------------------- verifier

fn leaves(v: &Value, path: String, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(m) if !m.is_empty() => {
            for (k, x) in m {
                leaves(x, if path.is_empty() { k.clone() } else { format!("{path}.{k}") }, out);
            }
        }
        Value::Array(a) if !a.is_empty() => {
            for (i, x) in a.iter().enumerate() {
                leaves(x, format!("{path}.{i}"), out);
            }
        }
        _ => {
            out.insert(path, v.clone());
        }
    }
}

fn words(s: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut cur = String::new();
    for ch in s.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.insert(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.insert(cur);
    }
    out
}

pub fn jaccard_oracle(a: &str, b: &str) -> f64 {
    let (x, y) = (words(a), words(b));
    let union: BTreeSet<_> = x.union(&y).collect();
    if union.is_empty() {
        return 1.0;
    }
    x.intersection(&y).count() as f64 / union.len() as f64
}

/// Brute-force per-field verdicts: path → pass, skip-class fields omitted.
pub fn field_oracle(reference: &EnvState, evaluated: &EnvState, threshold: f64) -> BTreeMap<String, bool> {
    let (mut r, mut e) = (BTreeMap::new(), BTreeMap::new());
    leaves(&serde_json::to_value(&reference.entities).unwrap(), String::new(), &mut r);
    leaves(&serde_json::to_value(&evaluated.entities).unwrap(), String::new(), &mut e);
    let mut out = BTreeMap::new();
    for path in r.keys().chain(e.keys()) {
        let name = path.split('.').rev().find(|s| !s.chars().all(|c| c.is_ascii_digit())).unwrap_or(path);
        if name.ends_with("_at") || name.ends_with("_time") || ["timestamp", "uuid", "token"].contains(&name) {
            continue;
        }
        let semantic = ["description", "message", "note", "content"].contains(&name);
        let pass = match (r.get(path), e.get(path)) {
            (Some(Value::String(a)), Some(Value::String(b))) if semantic => jaccard_oracle(a, b) >= threshold,
            (Some(a), Some(b)) => a == b,
            _ => false,
        };
        out.insert(path.clone(), pass);
    }
    out
}

const NOTE_WORDS: [&str; 8] = ["customer", "asked", "for", "a", "window", "seat", "late", "refund"];

fn mutate_once(v: &mut Value, rng: &mut ChaCha8Rng) {
    let mut paths = BTreeMap::new();
    leaves(v, String::new(), &mut paths);
    let keys: Vec<&String> = paths.keys().collect();
    let path = keys[rng.gen_range(0..keys.len())].clone();
    let mut node = &mut *v;
    let segs: Vec<&str> = path.split('.').collect();
    for s in &segs[..segs.len() - 1] {
        node = match node {
            Value::Object(m) => m.get_mut(*s).unwrap(),
            Value::Array(a) => &mut a[s.parse::<usize>().unwrap()],
            _ => unreachable!(),
        };
    }
    let last = segs[segs.len() - 1];
    let slot = match node {
        Value::Object(m) => m.get_mut(last).unwrap(),
        Value::Array(a) => &mut a[last.parse::<usize>().unwrap()],
        _ => unreachable!(),
    };
    let field = segs.iter().rev().find(|s| s.parse::<usize>().is_err()).copied().unwrap_or("");
    *slot = match slot.clone() {
        Value::Number(n) => json!(n.as_i64().unwrap_or(0) + rng.gen_range(1..5)),
        Value::Bool(b) => json!(!b),
        Value::String(_) if field == "note" => {
            let n = rng.gen_range(0..5);
            json!(NOTE_WORDS.choose_multiple(rng, n).cloned().collect::<Vec<_>>().join(" "))
        }
        Value::String(s) if rng.gen_bool(0.5) => json!(format!("{s} x")),
        Value::String(s) => json!(s.chars().rev().collect::<String>()),
        Value::Array(_) => json!(["extra"]),
        Value::Object(_) => json!({ "extra": 1 }),
        Value::Null => json!(0),
    };
}

/// `base` with 1–3 random leaf mutations that still deserialize.
pub fn perturb(base: &EnvState, rng: &mut ChaCha8Rng) -> EnvState {
    loop {
        let mut v = serde_json::to_value(&base.entities).unwrap();
        for _ in 0..rng.gen_range(1..=3) {
            mutate_once(&mut v, rng);
        }
        if let Ok(entities) = serde_json::from_value(v) {
            let mut s = base.clone();
            s.entities = entities;
            return s;
        }
    }
}

// ---------------------------------------------------------------- rollout

const TOOL_NAMES: [&str; 6] =
    ["get_user_details", "get_reservation_details", "cancel_reservation", "add_travel_note", "frobnicate", "book_reservation"];
const IDS: [&str; 5] = ["mei_thomas_8446", "79CKHW", "HAT026", "nope", ""];

fn fuzz_text(rng: &mut ChaCha8Rng, role: Role) -> String {
    let id = IDS[rng.gen_range(0..IDS.len())];
    let mut args = Map::new();
    for key in ["user_id", "reservation_id", "note", "reason"] {
        if rng.gen_bool(0.5) {
            args.insert(key.into(), json!(id));
        }
    }
    let func = format!(
        "<function>{}</function>",
        json!({ "name": TOOL_NAMES[rng.gen_range(0..TOOL_NAMES.len())], "arguments": args })
    );
    let signals = ["###STOP###", "###TRANSFER###", "###OUT-OF-SCOPE###", ""];
    let pieces = [
        func.clone(),
        format!("<message>hello {id}</message>"),
        format!("<answer>ok {}</answer>", signals[rng.gen_range(0..signals.len())]),
        format!("<answer>{} {}</answer>", signals[0], signals[1]),
        "<think>unclosed".to_string(),
        format!("{func}<message>both</message>"),
        "<function>{\"name\": \"get_user_details\", \"arguments\": {".to_string(),
        "plain text".to_string(),
        String::new(),
        "<function>[1,2,3]</function>".to_string(),
        "\u{1F600}<message></message>".to_string(),
    ];
    let n = rng.gen_range(0..pieces.len());
    let text = pieces[n].clone();
    if role == Role::User && n == 0 && rng.gen_bool(0.5) {
        return "<answer>fine</answer>".into();
    }
    text
}

/// A random scripted pair and turn budget for fuzz case `case`.
pub fn fuzz_episode(domain: &Domain, case: u64) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(case);
    let mut steps = |role| (0..rng.gen_range(0..8)).map(|_| fuzz_text(&mut rng, role)).collect::<Vec<_>>();
    let (agent_steps, user_steps) = (steps(Role::Agent), steps(Role::User));
    let mut agent = ScriptedPolicy::new(Role::Agent, "fuzz", agent_steps);
    let mut user = ScriptedPolicy::new(Role::User, "fuzz", user_steps);
    let mut task = TaskSpec { id: format!("fuzz{case}"), ..TaskSpec::default() };
    if rng.gen_bool(0.2) {
        task.selected_parameters.insert("reservation_id".into(), json!(IDS[rng.gen_range(0..IDS.len())]));
    }
    let cfg = RolloutConfig { max_turns: rng.gen_range(1..14), ..RolloutConfig::default() };
    run_episode(domain, &task, &mut agent as &mut dyn Policy, &mut user, &cfg, case)
}

// ------------------------------------------------------------------- grpo

pub fn random_toy_params(rng: &mut ChaCha8Rng, tools: usize) -> ToyPolicyParams {
    let mut p = ToyPolicyParams::new((0..tools).map(|i| format!("tool{i}")));
    p.logits.iter_mut().for_each(|l| *l = rng.gen_range(-2.0..2.0));
    p
}

fn log_softmax(row: &[f64], y: usize) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    row[y] - m - row.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Random records over a handful of contexts. With `in_band`, every ratio
/// under `params` lies strictly inside `[1-0.2, 1+0.2]` with margin.
pub fn random_batch(rng: &mut ChaCha8Rng, params: &ToyPolicyParams, n: usize, in_band: bool) -> TokenBatch {
    let v = params.vocab_size();
    let contexts: Vec<u32> = (0..4).map(|_| rng.gen_range(0..1024)).collect();
    let records = (0..n)
        .map(|i| {
            let context = contexts[rng.gen_range(0..contexts.len())];
            let token = rng.gen_range(0..v) as u32;
            let lp = log_softmax(params.row(context), token as usize);
            let shift = if in_band { rng.gen_range(-0.15..0.15) } else { rng.gen_range(-1.0..1.0) };
            TokenRecord {
                traj_id: format!("t{}", i % 3),
                turn: 1,
                pos: i,
                context,
                token,
                new_logprob: lp,
                old_logprob: lp + shift,
                advantage: rng.gen_range(-2.0..2.0),
            }
        })
        .collect();
    TokenBatch { records, total_tokens: n + rng.gen_range(0..4) }
}

/// Group objective recomputed from raw logits.
pub fn oracle_objective(batch: &TokenBatch, params: &ToyPolicyParams, eps: f64) -> f64 {
    let mut s = 0.0;
    for r in &batch.records {
        let ratio = (log_softmax(params.row(r.context), r.token as usize) - r.old_logprob).exp();
        let unclipped = ratio * r.advantage;
        let clipped = ratio.max(1.0 - eps).min(1.0 + eps) * r.advantage;
        s += if unclipped < clipped { unclipped } else { clipped };
    }
    s / batch.total_tokens as f64
}

/// Largest relative error between `grad` and central differences of the
/// oracle objective over the coordinates the batch touches.
pub fn fd_max_rel_error(batch: &TokenBatch, params: &ToyPolicyParams, grad: &[f64], eps: f64) -> f64 {
    let v = params.vocab_size();
    let ctxs: BTreeSet<u32> = batch.records.iter().map(|r| r.context).collect();
    let mut p = params.clone();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for f in ctxs {
        for j in 0..v {
            let i = f as usize * v + j;
            let x = p.logits[i];
            p.logits[i] = x + h;
            let up = oracle_objective(batch, &p, eps);
            p.logits[i] = x - h;
            let down = oracle_objective(batch, &p, eps);
            p.logits[i] = x;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6));
        }
    }
    worst
}
