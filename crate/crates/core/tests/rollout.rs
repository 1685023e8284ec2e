mod common;

use proptest::prelude::*;
use std::sync::Arc;
use tooltrain::env::{Domain, Role, TaskSpec, Termination};
use tooltrain::grpo::{toy_binding, toy_task, toy_user_script};
use tooltrain::policy::{Payload, Policy, Script, ScriptedPolicy, ToyPolicy, ToyPolicyParams};
use tooltrain::rollout::{
    export_sft, read_sft, read_trajectories, run_episode, sample_group, write_sft, RolloutConfig, SftFormat,
    TrajectoryWriter,
};
use tooltrain::verifier::Verifier;

fn greeting_task() -> TaskSpec {
    TaskSpec { id: "greeting".into(), reason_for_call: "say hello".into(), ..TaskSpec::default() }
}

#[test]
fn greeting_script_trace() {
    let d = Domain::airline();
    let s = Script::greeting();
    let (mut a, mut u) = (s.policy(Role::Agent), s.policy(Role::User));
    let t = run_episode(&d, &greeting_task(), &mut a, &mut u, &RolloutConfig::default(), 0);
    assert_eq!(t.termination, Termination::UserStop);
    assert_eq!(t.turns.len(), 3);
    assert!(t.turns.iter().all(|x| !x.is_tool_call()));
    assert_eq!(t.turns.iter().map(|x| x.actor).collect::<Vec<_>>(), [Role::User, Role::Agent, Role::User]);
    assert!(t.final_state.is_terminal());
}

#[test]
fn max_turns_one() {
    let d = Domain::airline();
    let mut a = ScriptedPolicy::new(Role::Agent, "a", vec!["<message>hi</message>".into(); 5]);
    let mut u = ScriptedPolicy::new(Role::User, "u", vec!["<answer>hello</answer>".into(); 5]);
    let cfg = RolloutConfig { max_turns: 1, ..RolloutConfig::default() };
    let t = run_episode(&d, &greeting_task(), &mut a, &mut u, &cfg, 0);
    assert_eq!(t.termination, Termination::MaxTurns);
    assert_eq!(t.turns.len(), 1);
    assert!(t.final_state.is_terminal());
}

#[test]
fn malformed_agent_output_continues() {
    let d = Domain::airline();
    let bad = "<message>a</message><function>{}</function>".to_string();
    let mut a = ScriptedPolicy::new(Role::Agent, "a", vec![bad.clone(), bad.clone()]);
    let mut u = ScriptedPolicy::new(Role::User, "u", vec!["<answer>x</answer>".into(), "<answer>y</answer>".into(), "<answer>###STOP###</answer>".into()]);
    let t = run_episode(&d, &greeting_task(), &mut a, &mut u, &RolloutConfig::default(), 0);
    assert_eq!(t.termination, Termination::UserStop);
    let agent_turns: Vec<_> = t.turns.iter().filter(|x| x.actor == Role::Agent).collect();
    assert_eq!(agent_turns.len(), 2);
    assert!(agent_turns.iter().all(|x| matches!(x.parsed.payload, Payload::Malformed { .. })));
    let logged: Vec<_> = t.final_state.history().iter().filter(|h| matches!(h, tooltrain::env::HistoryEntry::Message { role: Role::Agent, text } if *text == bad)).collect();
    assert_eq!(logged.len(), 2);
}

#[test]
fn exhausted_script_ends_with_error() {
    let d = Domain::airline();
    let mut a = ScriptedPolicy::new(Role::Agent, "a", vec![]);
    let mut u = ScriptedPolicy::new(Role::User, "u", vec!["<answer>x</answer>".into()]);
    let t = run_episode(&d, &greeting_task(), &mut a, &mut u, &RolloutConfig::default(), 0);
    assert_eq!(t.termination, Termination::Error);
    assert!(t.error.is_some());
}

#[test]
fn scripted_group_is_identical() {
    let d = Domain::toy_refund();
    let task = toy_task(&d);
    let s = toy_user_script();
    let cfg = RolloutConfig { group_size: 4, ..RolloutConfig::default() };
    let agent = |_| Box::new(s.policy(Role::Agent)) as Box<dyn Policy>;
    let user = |_| Box::new(s.policy(Role::User)) as Box<dyn Policy>;
    let g = sample_group(&d, &task, &agent, &user, &Verifier::new(&d), &cfg, 10).unwrap();
    assert_eq!(g.rewards, vec![1.0; 4]);
    let turns: Vec<_> = g.trajectories.iter().map(|t| serde_json::to_string(&t.turns).unwrap()).collect();
    assert!(turns.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn toy_group_reproduces_and_is_order_free() {
    let d = Domain::toy_refund();
    let task = toy_task(&d);
    let params = Arc::new(ToyPolicyParams::for_domain(&d));
    let script = toy_user_script();
    let cfg = RolloutConfig { group_size: 8, max_turns: 10, ..RolloutConfig::default() };
    let agent = |_| Box::new(ToyPolicy::new(params.clone(), toy_binding())) as Box<dyn Policy>;
    let user = |_| Box::new(script.policy(Role::User)) as Box<dyn Policy>;
    let v = Verifier::new(&d);
    let a = sample_group(&d, &task, &agent, &user, &v, &cfg, 500).unwrap();
    let b = sample_group(&d, &task, &agent, &user, &v, &cfg, 500).unwrap();
    assert_eq!(a, b);
    for (g, t) in a.trajectories.iter().enumerate().rev() {
        let mut ag = ToyPolicy::new(params.clone(), toy_binding());
        let mut us = script.policy(Role::User);
        let mut solo = run_episode(&d, &task, &mut ag, &mut us, &cfg, 500 + g as u64);
        solo.reward = Some(v.reward(&task, &solo));
        assert_eq!(&solo, t);
    }
}

#[test]
fn paper_batch_shape_validates() {
    let cfg = RolloutConfig { prompts_per_batch: 8, group_size: 64, ..RolloutConfig::default() };
    cfg.validate().unwrap();
    assert_eq!(cfg.batch_episodes(), 512);
    assert!(RolloutConfig { group_size: 1, ..RolloutConfig::default() }.validate().is_err());
    assert!(RolloutConfig { max_turns: 0, ..RolloutConfig::default() }.validate().is_err());
}

#[test]
fn token_counts_match_ids() {
    let d = Domain::toy_refund();
    let params = Arc::new(ToyPolicyParams::for_domain(&d));
    for seed in 0..30 {
        let mut a = ToyPolicy::new(params.clone(), toy_binding());
        let mut u = toy_user_script().policy(Role::User);
        let t = run_episode(&d, &toy_task(&d), &mut a, &mut u, &RolloutConfig { max_turns: 10, ..RolloutConfig::default() }, seed);
        for turn in &t.turns {
            if let Some(ids) = &turn.token_ids {
                assert_eq!(turn.token_count, ids.len());
            }
        }
        let n: usize = t.turns.iter().filter(|x| x.actor == Role::Agent).map(|x| x.token_ids.as_ref().unwrap().len()).sum();
        assert_eq!(t.agent_tokens(), n);
    }
}

#[test]
fn user_side_sft_counts_user_turns() {
    let d = Domain::airline();
    let s = Script::greeting();
    let (mut a, mut u) = (s.policy(Role::Agent), s.policy(Role::User));
    let t = run_episode(&d, &greeting_task(), &mut a, &mut u, &RolloutConfig::default(), 0);
    let recs = export_sft(&d, std::slice::from_ref(&t), Role::User).unwrap();
    assert_eq!(recs.len(), 2);
    assert_eq!(export_sft(&d, std::slice::from_ref(&t), Role::Agent).unwrap().len(), 1);
    for f in [SftFormat::Jsonl, SftFormat::JsonArray] {
        assert_eq!(read_sft(&write_sft(&recs, f), f).unwrap(), recs);
    }
}

#[test]
fn user_tool_calls_are_user_targets() {
    let d = Domain::airline();
    assert!(d.dual_control());
    let call = r#"<function>{"name":"get_reservation_details","arguments":{"reservation_id":"79CKHW"}}</function>"#;
    let mut u = ScriptedPolicy::new(Role::User, "u", vec![call.into(), "<answer>It is 79CKHW.</answer>".into(), "<answer>###STOP###</answer>".into()]);
    let mut a = ScriptedPolicy::new(Role::Agent, "a", vec!["<message>Which booking?</message>".into()]);
    let t = run_episode(&d, &greeting_task(), &mut a, &mut u, &RolloutConfig::default(), 0);
    assert!(t.turns[0].tool_result.as_ref().unwrap().ok);
    let recs = export_sft(&d, std::slice::from_ref(&t), Role::User).unwrap();
    assert_eq!(recs.len(), 3);
    assert_eq!(recs[0].target, call);
}

#[test]
fn store_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let d = Domain::airline();
    let s = Script::greeting();
    let trajs: Vec<_> = (0..3)
        .map(|seed| {
            let (mut a, mut u) = (s.policy(Role::Agent), s.policy(Role::User));
            run_episode(&d, &greeting_task(), &mut a, &mut u, &RolloutConfig::default(), seed)
        })
        .collect();
    {
        let w = TrajectoryWriter::create(&path).unwrap();
        trajs.iter().for_each(|t| w.append(t).unwrap());
    }
    assert_eq!(read_trajectories(&path).unwrap(), trajs);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn fuzzed_episodes_are_total(case in any::<u64>()) {
        let d = Domain::airline();
        let t = common::fuzz_episode(&d, case);
        prop_assert!(t.final_state.is_terminal());
        prop_assert_eq!(t.final_state.termination(), Some(t.termination));
        let history_turns = t.final_state.turn() as usize;
        prop_assert!(history_turns >= t.turns.len().saturating_sub(1));
        prop_assert_eq!(common::fuzz_episode(&d, case), t);
    }
}

#[test]
fn logprobs_survive_storage() {
    let d = Domain::toy_refund();
    let params = Arc::new(ToyPolicyParams::for_domain(&d));
    let trajs: Vec<_> = (0..20)
        .map(|seed| {
            let mut a = ToyPolicy::new(params.clone(), toy_binding());
            let mut u = toy_user_script().policy(Role::User);
            run_episode(&d, &toy_task(&d), &mut a, &mut u, &RolloutConfig { max_turns: 10, ..RolloutConfig::default() }, seed)
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.jsonl");
    {
        let w = TrajectoryWriter::create(&path).unwrap();
        trajs.iter().for_each(|t| w.append(t).unwrap());
    }
    assert_eq!(read_trajectories(&path).unwrap(), trajs);
}
