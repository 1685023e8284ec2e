mod common;

use common::{approx, fd_max_rel_error, oracle_objective, random_batch, random_toy_params};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use tooltrain::env::{Domain, Role};
use tooltrain::grpo::{
    batch_objective, clipped_surrogate, dynamic_filter, group_advantages, rescore, toy_binding, toy_policy_gradient,
    toy_task, toy_user_script, train_toy, write_signals, AdvantagedGroup, GrpoConfig, GrpoError, SignalRecord,
    TokenBatch, TokenRecord,
};
use tooltrain::policy::{Policy, ToyPolicy, ToyPolicyParams};
use tooltrain::rollout::{sample_group, Group, RolloutConfig};
use tooltrain::verifier::Verifier;

fn group(rewards: &[f64]) -> Group {
    Group { task_id: "t".into(), trajectories: vec![], rewards: rewards.to_vec() }
}

fn rec(traj: &str, ratio: f64, adv: f64) -> TokenRecord {
    TokenRecord { traj_id: traj.into(), turn: 1, pos: 0, context: 0, token: 0, new_logprob: ratio.ln(), old_logprob: 0.0, advantage: adv }
}

#[test]
fn advantage_golden_vectors() {
    let (mu, sigma, a) = group_advantages(&[1.0, 0.0, 0.0, 0.0]).unwrap();
    assert_eq!(mu, 0.25);
    assert!(approx(sigma, 0.1875f64.sqrt(), 1e-15));
    let want = [1.7320508075688772, -0.5773502691896258, -0.5773502691896258, -0.5773502691896258];
    a.iter().zip(want).for_each(|(x, y)| assert!(approx(*x, y, 1e-12)));
    assert_eq!(group_advantages(&[1.0, 1.0, 0.0, 0.0]).unwrap().2, [1.0, 1.0, -1.0, -1.0]);
    assert_eq!(group_advantages(&[1.0; 4]), Err(GrpoError::ZeroVariance));
    assert_eq!(group_advantages(&[]), Err(GrpoError::EmptyBatch));
}

#[test]
fn filter_keeps_mixed_groups() {
    let kept = dynamic_filter(vec![group(&[1.0; 4]), group(&[1.0, 0.0, 0.0, 1.0]), group(&[0.0; 4])]).unwrap();
    assert_eq!(kept.len(), 1);
    assert_eq!(kept[0].advantages, [1.0, -1.0, -1.0, 1.0]);
    assert_eq!((kept[0].mu, kept[0].sigma), (0.5, 0.5));
    assert_eq!(dynamic_filter(vec![group(&[0.0; 4]), group(&[1.0; 4])]), Err(GrpoError::EmptyBatch));
    let flat = AdvantagedGroup::new(group(&[1.0; 3]));
    assert_eq!(flat.advantages, [0.0; 3]);
}

#[test]
fn surrogate_examples() {
    let e = 0.2;
    assert!(approx(clipped_surrogate(1.5, 1.0, e), 1.2, 1e-15));
    assert_eq!(clipped_surrogate(1.5, -1.0, e), -1.5);
    assert_eq!(clipped_surrogate(0.5, 1.0, e), 0.5);
    assert!(approx(clipped_surrogate(0.5, -1.0, e), -0.8, 1e-15));
    assert_eq!(clipped_surrogate(1.0, 0.7, e), 0.7);
    assert_eq!(clipped_surrogate(3.0, 0.0, e), 0.0);
}

#[test]
fn objective_divides_by_group_tokens() {
    let batch = TokenBatch { records: vec![rec("a", 1.0, 1.0), rec("a", 1.0, 1.0), rec("a", 1.0, 1.0), rec("b", 1.0, -1.0)], total_tokens: 4 };
    assert!(approx(batch_objective(&batch, 0.2).unwrap(), 0.5, 1e-15));
    let clipped = TokenBatch { records: vec![rec("a", 2.0, 1.0), rec("b", 0.5, -1.0)], total_tokens: 2 };
    assert!(approx(batch_objective(&clipped, 0.2).unwrap(), (1.2 - 0.8) / 2.0, 1e-15));
    let empty = TokenBatch { records: vec![], total_tokens: 0 };
    assert_eq!(batch_objective(&empty, 0.2), Err(GrpoError::EmptyBatch));
}

#[test]
fn objective_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let p = random_toy_params(&mut rng, 4);
        let b = random_batch(&mut rng, &p, 12, false);
        let ours = batch_objective(&rescore(&b, &p).unwrap(), 0.2).unwrap();
        assert!(approx(ours, oracle_objective(&b, &p, 0.2), 1e-12));
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let p = random_toy_params(&mut rng, 3);
        let b = random_batch(&mut rng, &p, 10, true);
        let g = toy_policy_gradient(&b, &p, 0.2).unwrap();
        assert!(fd_max_rel_error(&b, &p, &g, 0.2) < 1e-4);
    }
}

#[test]
fn clipped_tokens_contribute_no_gradient() {
    let p = ToyPolicyParams::new(["a".to_string()]);
    let lp = p.logprob(0, 0);
    let r = TokenRecord { traj_id: "x".into(), turn: 1, pos: 0, context: 0, token: 0, new_logprob: lp, old_logprob: lp - 1.0, advantage: 1.0 };
    let b = TokenBatch { records: vec![r], total_tokens: 1 };
    assert!(toy_policy_gradient(&b, &p, 0.2).unwrap().iter().all(|&x| x == 0.0));
}

#[test]
fn token_batch_from_sampled_group() {
    let d = Domain::toy_refund();
    let task = toy_task(&d);
    let params = Arc::new(ToyPolicyParams::for_domain(&d));
    let script = toy_user_script();
    let cfg = RolloutConfig { group_size: 16, max_turns: 10, ..RolloutConfig::default() };
    let agent = |_| Box::new(ToyPolicy::new(params.clone(), toy_binding())) as Box<dyn Policy>;
    let user = |_| Box::new(script.policy(Role::User)) as Box<dyn Policy>;
    let g = sample_group(&d, &task, &agent, &user, &Verifier::new(&d), &cfg, 3).unwrap();
    let tokens: usize = g.trajectories.iter().map(|t| t.agent_tokens()).sum();
    let ag = AdvantagedGroup::new(g);
    let b = TokenBatch::from_group(&ag).unwrap();
    assert_eq!(b.total_tokens, tokens);
    assert_eq!(b.len(), tokens);
    // Fresh samples have ratio 1 everywhere, so the objective is the token-weighted mean advantage.
    let weighted: f64 = ag.group.trajectories.iter().zip(&ag.advantages).map(|(t, a)| t.agent_tokens() as f64 * a).sum();
    assert!(approx(batch_objective(&b, 0.2).unwrap(), weighted / tokens as f64, 1e-12));
    let lines: Vec<SignalRecord> = write_signals(&b).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), b.len());
    assert!(lines.iter().zip(&b.records).all(|(s, r)| s.advantage == r.advantage && s.old_logprob == r.old_logprob));
}

#[test]
fn config_validation() {
    GrpoConfig::default().validate().unwrap();
    for bad in [
        GrpoConfig { epsilon: 0.0, ..GrpoConfig::default() },
        GrpoConfig { group_size: 1, ..GrpoConfig::default() },
        GrpoConfig { learning_rate: f64::NAN, ..GrpoConfig::default() },
        GrpoConfig { epochs: 0, ..GrpoConfig::default() },
    ] {
        assert!(matches!(bad.validate(), Err(GrpoError::InvalidConfig(_))));
    }
}

#[test]
fn zero_learning_rate_leaves_policy_unchanged() {
    let d = Domain::toy_refund();
    let r = train_toy(&d, &GrpoConfig { learning_rate: 0.0, iterations: 15, ..GrpoConfig::default() }).unwrap();
    assert_eq!(r.params, ToyPolicyParams::for_domain(&d));
    let mean = r.curve.iter().map(|p| p.mean_reward).sum::<f64>() / r.curve.len() as f64;
    assert!(mean < 0.3, "{mean}");
}

#[test]
fn short_training_run_is_frozen() {
    let d = Domain::toy_refund();
    let cfg = GrpoConfig { iterations: 30, ..GrpoConfig::default() };
    let r = train_toy(&d, &cfg).unwrap();
    assert_eq!(r.curve.len(), 30);
    assert!(approx(r.curve[0].mean_reward, 0.15625, 1e-12));
    assert_eq!(r.first_reaching(0.9), Some(22));
    assert_eq!(train_toy(&d, &cfg).unwrap().curve, r.curve);
    assert!(r.curve.iter().all(|p| p.groups_retained <= cfg.prompts_per_batch));
}

proptest! {
    #[test]
    fn advantages_are_standardized(rewards in proptest::collection::vec(0.0f64..1.0, 2..16)) {
        if let Ok((mu, sigma, a)) = group_advantages(&rewards) {
            let n = a.len() as f64;
            prop_assert!(a.iter().sum::<f64>().abs() < 1e-9);
            prop_assert!((a.iter().map(|x| x * x).sum::<f64>() / n - 1.0).abs() < 1e-9);
            for (r, x) in rewards.iter().zip(&a) {
                prop_assert!((mu + sigma * x - r).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn surrogate_never_exceeds_unclipped(ratio in 0.0f64..3.0, adv in -3.0f64..3.0) {
        let s = clipped_surrogate(ratio, adv, 0.2);
        prop_assert!(s <= ratio * adv + 1e-12);
        if (0.8..=1.2).contains(&ratio) {
            prop_assert!((s - ratio * adv).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicating_records_is_scale_invariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_toy_params(&mut rng, 3);
        let b = random_batch(&mut rng, &p, 6, false);
        let mut d = b.clone();
        d.records.extend(b.records.clone());
        d.total_tokens *= 2;
        prop_assert!((batch_objective(&b, 0.2).unwrap() - batch_objective(&d, 0.2).unwrap()).abs() < 1e-12);
        let (g1, g2) = (toy_policy_gradient(&b, &p, 0.2).unwrap(), toy_policy_gradient(&d, &p, 0.2).unwrap());
        prop_assert!(g1.iter().zip(&g2).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn gradient_is_linear_in_advantage(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_toy_params(&mut rng, 3);
        let mut b = random_batch(&mut rng, &p, 6, true);
        let g = toy_policy_gradient(&b, &p, 0.2).unwrap();
        b.records.iter_mut().for_each(|r| r.advantage *= 2.0);
        let g2 = toy_policy_gradient(&b, &p, 0.2).unwrap();
        prop_assert!(g.iter().zip(&g2).all(|(x, y)| (2.0 * x - y).abs() < 1e-12));
        b.records.iter_mut().for_each(|r| r.advantage = 0.0);
        prop_assert!(toy_policy_gradient(&b, &p, 0.2).unwrap().iter().all(|&x| x == 0.0));
    }
}
