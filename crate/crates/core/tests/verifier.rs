mod common;

use common::{approx, field_oracle, jaccard_oracle, perturb};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};
use std::collections::BTreeMap;
use tooltrain::env::{Domain, Role, TaskSpec};
use tooltrain::policy::{render, ParsedAction, Script};
use tooltrain::rollout::{run_episode, RolloutConfig, Trajectory};
use tooltrain::verifier::{
    check_policies, classify_field, deep_compare, derive_key_functions, entity_leaves, extract_function_calls,
    fuzzy_text_match, match_key_functions, CheckerSpec, FieldClass, FunctionCall, KeyFunction, Verifier,
};

fn fc(name: &str, args: Value) -> FunctionCall {
    FunctionCall { name: name.into(), arguments: args.as_object().unwrap().clone(), actor: Role::Agent, ok: true }
}

fn no_overrides() -> BTreeMap<String, FieldClass> {
    BTreeMap::new()
}

#[test]
fn classify_examples() {
    let o = no_overrides();
    assert_eq!(classify_field("reservation.total_amount", &o), FieldClass::Exact);
    assert_eq!(classify_field("reservation.note", &o), FieldClass::Semantic);
    assert_eq!(classify_field("booking.created_at", &o), FieldClass::Skip);
    assert_eq!(classify_field("79CKHW.flights.0.date", &o), FieldClass::Exact);
    assert_eq!(classify_field("x.messages.3", &o), FieldClass::Exact);
    let mut o = no_overrides();
    o.insert("note".into(), FieldClass::Exact);
    o.insert("79CKHW.status".into(), FieldClass::Skip);
    assert_eq!(classify_field("79CKHW.note", &o), FieldClass::Exact);
    assert_eq!(classify_field("79CKHW.status", &o), FieldClass::Skip);
    assert_eq!(classify_field("YHLGGW.status", &o), FieldClass::Exact);
}

#[test]
fn fuzzy_examples() {
    let s = fuzzy_text_match("change of plans", "plans change");
    assert!(approx(s, 2.0 / 3.0, 1e-12));
    assert_eq!(s, jaccard_oracle("change of plans", "plans change"));
    assert_eq!(fuzzy_text_match("", "  "), 1.0);
    assert_eq!(fuzzy_text_match("Window SEAT", "window, seat!"), 1.0);
    assert_eq!(fuzzy_text_match("a", ""), 0.0);
}

#[test]
fn deep_compare_examples() {
    let d = Domain::airline();
    let base = d.base_state(0);
    let same = deep_compare(&base, &base, &no_overrides(), 0.5);
    assert_eq!(same.score, 1.0);
    assert_eq!(same.passed, same.total);

    let mut v = serde_json::to_value(&base.entities).unwrap();
    *v.pointer_mut("/79CKHW/total_baggages").unwrap() = json!(2);
    *v.pointer_mut("/79CKHW/note").unwrap() = json!("customer asked for a window seat");
    *v.pointer_mut("/79CKHW/created_at").unwrap() = json!("2030-01-01T00:00:00");
    let mut other = base.clone();
    other.entities = serde_json::from_value(v).unwrap();
    let r = deep_compare(&base, &other, &no_overrides(), 0.5);
    let failing: Vec<&str> = r.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    assert_eq!(failing, ["79CKHW.note", "79CKHW.total_baggages"]);
    assert!(r.checks.iter().all(|c| c.name != "79CKHW.created_at"));
    assert_eq!(r.total, same.total);
}

#[test]
fn semantic_note_passes_on_paraphrase() {
    let d = Domain::airline();
    let set_note = |s: &str| {
        let mut st = d.base_state(0);
        let mut v = serde_json::to_value(&st.entities).unwrap();
        *v.pointer_mut("/79CKHW/note").unwrap() = json!(s);
        st.entities = serde_json::from_value(v).unwrap();
        st
    };
    let a = set_note("customer asked for a window seat");
    let b = set_note("the customer asked for a window seat please");
    let c = set_note("late refund");
    assert_eq!(deep_compare(&a, &b, &no_overrides(), 0.5).score, 1.0);
    assert!(deep_compare(&a, &c, &no_overrides(), 0.5).score < 1.0);
    let mut o = no_overrides();
    o.insert("note".into(), FieldClass::Exact);
    assert!(deep_compare(&a, &b, &o, 0.5).score < 1.0);
}

#[test]
fn deep_compare_agrees_with_field_oracle() {
    let d = Domain::airline();
    let base = d.base_state(0);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..1000 {
        let (r, e) = if i % 2 == 0 { (base.clone(), perturb(&base, &mut rng)) } else { (perturb(&base, &mut rng), perturb(&base, &mut rng)) };
        let report = deep_compare(&r, &e, &no_overrides(), 0.5);
        let got: BTreeMap<String, bool> = report.checks.iter().map(|c| (c.name.clone(), c.pass)).collect();
        assert_eq!(got, field_oracle(&r, &e, 0.5), "pair {i}");
    }
}

fn numeric_paths(d: &Domain) -> Vec<String> {
    entity_leaves(&d.base_state(0))
        .into_iter()
        .filter(|(p, v)| v.is_i64() && classify_field(p, &no_overrides()) == FieldClass::Exact)
        .map(|(p, _)| format!("/{}", p.replace('.', "/")))
        .collect()
}

#[test]
fn damage_is_monotone() {
    let d = Domain::airline();
    let base = d.base_state(0);
    let paths = numeric_paths(&d);
    assert!(paths.len() > 20);
    let mut prev = 1.0;
    for m in 0..=20 {
        let mut v = serde_json::to_value(&base.entities).unwrap();
        for p in &paths[..m] {
            let slot = v.pointer_mut(p).unwrap();
            *slot = json!(slot.as_i64().unwrap() + 1);
        }
        let mut s = base.clone();
        s.entities = serde_json::from_value(v).unwrap();
        let r = deep_compare(&base, &s, &no_overrides(), 0.5);
        assert!(r.score <= prev);
        assert_eq!(r.total - r.passed, m);
        prev = r.score;
    }
}

#[test]
fn key_function_matching() {
    let key = KeyFunction {
        name: "cancel_reservation".into(),
        critical: json!({ "reservation_id": "79CKHW" }).as_object().unwrap().clone(),
        semantic: json!({ "reason": "change of plans" }).as_object().unwrap().clone(),
    };
    let good = fc("cancel_reservation", json!({ "reservation_id": "79CKHW", "reason": "plans change" }));
    let wrong_id = fc("cancel_reservation", json!({ "reservation_id": "YHLGGW", "reason": "change of plans" }));
    let mut failed = good.clone();
    failed.ok = false;
    let read = fc("get_reservation_details", json!({ "reservation_id": "79CKHW" }));
    let keys = std::slice::from_ref(&key);
    assert_eq!(match_key_functions(keys, &[good.clone()], 0.5).score, 1.0);
    assert_eq!(match_key_functions(keys, &[wrong_id.clone()], 0.5).score, 0.0);
    assert_eq!(match_key_functions(keys, &[failed], 0.5).score, 0.0);
    assert_eq!(match_key_functions(keys, &[good.clone()], 0.9).score, 0.0);
    assert_eq!(match_key_functions(keys, &[read.clone(), wrong_id, read.clone(), good], 0.5).score, 1.0);
    assert_eq!(match_key_functions(&[], &[read], 0.5).score, 1.0);
}

#[test]
fn derived_keys_keep_only_mutating_calls() {
    let d = Domain::airline();
    let calls = [
        fc("get_reservation_details", json!({ "reservation_id": "79CKHW" })),
        fc("add_travel_note", json!({ "reservation_id": "79CKHW", "note": "window seat" })),
    ];
    let keys = derive_key_functions(&calls, &["get_reservation_details".into(), "add_travel_note".into()], &d);
    assert_eq!(keys.len(), 1);
    assert_eq!(keys[0].critical, *json!({ "reservation_id": "79CKHW" }).as_object().unwrap());
    assert_eq!(keys[0].semantic, *json!({ "note": "window seat" }).as_object().unwrap());
    assert!(derive_key_functions(&calls, &[], &d).is_empty());
}

#[test]
fn policy_checks() {
    let d = Domain::airline();
    let init = d.base_state(0);
    let as_fc = |c: &tooltrain::env::ToolCall| FunctionCall { name: c.name.clone(), arguments: c.arguments.clone(), actor: Role::Agent, ok: true };
    let two_certs = common::booking("mei_thomas_8446", 1, json!([{ "payment_id": "certificate_3221", "amount": 100 }, { "payment_id": "certificate_7745", "amount": 110 }]));
    let r = check_policies(&d, &init, &[as_fc(&two_certs)], &["certificate_limit".into(), "passenger_max_5".into()]).unwrap();
    assert_eq!(r.score, 0.5);
    assert!(!r.checks[0].pass && r.checks[1].pass);

    let bag = |n: u64| fc("update_reservation_baggages", json!({ "reservation_id": "B3VC7K", "total_baggages": n, "nonfree_baggages": 0, "payment_id": "credit_card_4421" }));
    let rules = ["baggage_add_only".to_string()];
    assert_eq!(check_policies(&d, &init, &[bag(4)], &rules).unwrap().score, 1.0);
    assert_eq!(check_policies(&d, &init, &[bag(2)], &rules).unwrap().score, 0.0);
    let mut failed = bag(2);
    failed.ok = false;
    assert_eq!(check_policies(&d, &init, &[failed], &rules).unwrap().score, 1.0);

    let vacuous = check_policies(&d, &init, &[], &["cancellation_24h".into(), "gift_card_limit".into()]).unwrap();
    assert_eq!(vacuous.score, 1.0);
    assert_eq!(vacuous.checks.len(), 2);
    assert_eq!(check_policies(&d, &init, &[], &[]).unwrap().score, 1.0);
    assert!(check_policies(&d, &init, &[], &["no_such_rule".into()]).is_err());
}

#[test]
fn policy_replay_tracks_state() {
    let d = Domain::airline();
    let init = d.base_state(0);
    for (rule, bad, good) in common::rule_cases() {
        let to_fc = |c: &tooltrain::env::ToolCall| FunctionCall { name: c.name.clone(), arguments: c.arguments.clone(), actor: Role::Agent, ok: true };
        let ids = [rule.as_str().to_string()];
        assert_eq!(check_policies(&d, &init, &[to_fc(&bad)], &ids).unwrap().score, 0.0, "{rule:?}");
        assert_eq!(check_policies(&d, &init, &[to_fc(&good)], &ids).unwrap().score, 1.0, "{rule:?}");
    }
}

// ------------------------------------------------------------- end to end

fn note_script(reservation: &str, note: &str, extra_read: bool) -> Script {
    let mut agent = Vec::new();
    if extra_read {
        agent.push(render(&ParsedAction::function("get_reservation_details", json!({ "reservation_id": reservation }))));
    }
    agent.push(render(&ParsedAction::function("add_travel_note", json!({ "reservation_id": reservation, "note": note }))));
    agent.push(render(&ParsedAction::message("Noted.")));
    let user = vec!["<answer>Please note a window seat on 79CKHW.</answer>".into(), "<answer>Thanks. ###STOP###</answer>".into()];
    Script { name: "note".into(), agent, user }
}

fn play(d: &Domain, task: &TaskSpec, s: &Script) -> Trajectory {
    let (mut a, mut u) = (s.policy(Role::Agent), s.policy(Role::User));
    run_episode(d, task, &mut a, &mut u, &RolloutConfig::default(), 0)
}

fn note_task(d: &Domain) -> TaskSpec {
    let mut task = TaskSpec { id: "note".into(), ..TaskSpec::default() };
    let reference = play(d, &task, &note_script("79CKHW", "customer asked for a window seat", false));
    let mut spec = CheckerSpec::new(reference.final_state.clone());
    spec.key_functions = derive_key_functions(&extract_function_calls(&reference), &["add_travel_note".into()], d);
    spec.policy_focuses = vec!["basic_economy_mod".into()];
    spec.validate(d).unwrap();
    task.checker_spec = Some(spec);
    task
}

#[test]
fn reward_end_to_end() {
    let d = Domain::airline();
    let task = note_task(&d);
    let v = Verifier::new(&d);
    let spec = task.checker_spec.as_ref().unwrap();
    let eval = |s: Script| v.evaluate_submission(spec, &play(&d, &task, &s));

    let own = eval(note_script("79CKHW", "customer asked for a window seat", false));
    assert_eq!((own.reward, own.overall_pass), (1, true));
    assert!(own.checks_state.is_empty());

    let para = eval(note_script("79CKHW", "The customer asked for a window seat, please.", false));
    assert_eq!(para.reward, 1);

    let extra = eval(note_script("79CKHW", "customer asked for a window seat", true));
    assert_eq!(extra.component_scores, own.component_scores);
    assert_eq!(extra.reward, 1);

    let wrong = eval(note_script("YHLGGW", "customer asked for a window seat", false));
    assert_eq!(wrong.reward, 0);
    assert_eq!(wrong.component_scores.functions, 0.0);
    let failing: Vec<&str> = wrong.checks_state.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(failing, ["79CKHW.note", "YHLGGW.note"]);
    assert_eq!(wrong.state_fields_total - wrong.state_fields_passed, 2);

    let off_topic = eval(note_script("79CKHW", "late refund", false));
    assert_eq!(off_topic.reward, 0);
    assert_eq!(off_topic.component_scores.functions, 0.0);
}

#[test]
fn reports_are_deterministic() {
    let d = Domain::airline();
    let task = note_task(&d);
    let v = Verifier::new(&d);
    let t = play(&d, &task, &note_script("YHLGGW", "x", true));
    let spec = task.checker_spec.as_ref().unwrap();
    assert_eq!(v.evaluate_submission(spec, &t).to_json(), v.evaluate_submission(spec, &t).to_json());
    assert_eq!(v.reward(&task, &t), 0.0);
    assert_eq!(v.reward(&TaskSpec::default(), &t), 0.0);
}

#[test]
fn error_episode_never_passes() {
    let d = Domain::airline();
    let task = note_task(&d);
    let mut s = note_script("79CKHW", "customer asked for a window seat", false);
    s.agent.pop();
    let t = play(&d, &task, &s);
    let r = Verifier::new(&d).evaluate_submission(task.checker_spec.as_ref().unwrap(), &t);
    assert_eq!(r.reward, 0);
    assert!(r.checks_state.iter().any(|c| c.name == "episode.termination"));
}

#[test]
fn invalid_spec_is_rejected() {
    let d = Domain::airline();
    let mut spec = CheckerSpec::new(d.base_state(0));
    spec.key_functions.push(KeyFunction { name: "get_user_details".into(), critical: Map::new(), semantic: Map::new() });
    assert!(spec.validate(&d).is_err());
    spec.key_functions.clear();
    spec.policy_focuses.push("bogus".into());
    assert!(spec.validate(&d).is_err());
}

proptest! {
    #[test]
    fn fuzzy_is_symmetric_and_bounded(a in "[a-cA-C ,]{0,20}", b in "[a-cA-C ,]{0,20}") {
        let s = fuzzy_text_match(&a, &b);
        prop_assert_eq!(s, fuzzy_text_match(&b, &a));
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(s, jaccard_oracle(&a, &b));
        prop_assert_eq!(fuzzy_text_match(&a, &a), 1.0);
    }

    #[test]
    fn deep_compare_is_symmetric(seed in any::<u64>()) {
        let d = Domain::airline();
        let base = d.base_state(0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y) = (perturb(&base, &mut rng), perturb(&base, &mut rng));
        let a = deep_compare(&x, &y, &no_overrides(), 0.5);
        let b = deep_compare(&y, &x, &no_overrides(), 0.5);
        prop_assert_eq!((a.passed, a.total), (b.passed, b.total));
        prop_assert_eq!(deep_compare(&x, &x, &no_overrides(), 0.5).score, 1.0);
    }
}
