use super::signal::{dynamic_filter, toy_policy_gradient, rescore, AdvantagedGroup, TokenBatch};
use super::{GrpoConfig, GrpoError};
use crate::env::{Domain, Role, TaskSpec, ToolCall};
use crate::policy::{Policy, Script, ToyArgBinding, ToyPolicy, ToyPolicyParams};
use crate::rollout::{sample_group, Group, PolicyFactory, RolloutConfig};
use crate::util::mix_seed;
use crate::verifier::{CheckerSpec, KeyFunction, Verifier};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map};
use std::sync::Arc;

/// Refund ORD-1001 on the toy desk; nothing else may change.
pub fn toy_task(domain: &Domain) -> TaskSpec {
    let call = ToolCall::new("issue_refund", json!({ "order_id": "ORD-1001" }), Role::Agent);
    let (reference, _) = domain.execute_tool(&domain.base_state(0), &call).expect("toy fixture accepts the refund");
    let mut spec = CheckerSpec::new(reference);
    let mut critical = Map::new();
    critical.insert("order_id".into(), json!("ORD-1001"));
    spec.key_functions.push(KeyFunction { name: "issue_refund".into(), critical, semantic: Map::new() });
    let mut params = Map::new();
    params.insert("order_id".into(), json!("ORD-1001"));
    params.insert("customer_id".into(), json!("cust_01"));
    TaskSpec {
        id: "toy_refund_0".into(),
        context: "Customer cust_01 received order ORD-1001.".into(),
        purpose: "refund".into(),
        reason_for_call: "Please refund my order ORD-1001.".into(),
        known_info: "customer id cust_01, order id ORD-1001".into(),
        task_instructions: "Ask for the refund and stop once the agent replies.".into(),
        must_have_functions: vec!["issue_refund".into()],
        checker_spec: Some(spec),
        selected_parameters: params,
        ..TaskSpec::default()
    }
}

pub fn toy_user_script() -> Script {
    serde_json::from_str(include_str!("../../fixtures/scripts/refund_user.json")).expect("shipped script parses")
}

pub fn toy_binding() -> ToyArgBinding {
    let mut b = Map::new();
    b.insert("order_id".into(), json!("ORD-1001"));
    b.insert("customer_id".into(), json!("cust_01"));
    b
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub mean_reward: f64,
    pub groups_retained: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub curve: Vec<CurvePoint>,
    /// Iterations where every group was degenerate and no update was made.
    pub skipped_iterations: usize,
    pub params: ToyPolicyParams,
    /// Token signals of the last update.
    pub last_batch: Vec<TokenBatch>,
}

impl TrainReport {
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("iteration,mean_reward,groups_retained\n");
        for p in &self.curve {
            s.push_str(&format!("{},{:.6},{}\n", p.iteration, p.mean_reward, p.groups_retained));
        }
        s
    }

    /// First iteration whose mean reward reaches `target`.
    pub fn first_reaching(&self, target: f64) -> Option<usize> {
        self.curve.iter().find(|p| p.mean_reward >= target).map(|p| p.iteration)
    }

    pub fn final_reward(&self) -> f64 {
        self.curve.last().map(|p| p.mean_reward).unwrap_or(0.0)
    }
}

/// Trains the tabular policy on the toy task. Each iteration samples
/// `prompts_per_batch` groups of `group_size` episodes and takes one
/// gradient-ascent step per epoch on the mean group objective.
pub fn train_toy(domain: &Domain, cfg: &GrpoConfig) -> Result<TrainReport, GrpoError> {
    cfg.validate()?;
    let task = toy_task(domain);
    let script = toy_user_script();
    let verifier = Verifier::new(domain);
    let rollout = RolloutConfig {
        max_turns: cfg.max_turns,
        group_size: cfg.group_size,
        prompts_per_batch: cfg.prompts_per_batch,
        ..RolloutConfig::default()
    };
    let binding = toy_binding();
    let mut params = ToyPolicyParams::for_domain(domain);
    let mut report = TrainReport { curve: Vec::new(), skipped_iterations: 0, params: params.clone(), last_batch: Vec::new() };

    for it in 0..cfg.iterations {
        let snapshot = Arc::new(params.clone());
        let agent_factory = {
            let (snapshot, binding) = (snapshot.clone(), binding.clone());
            move |_seed: u64| -> Box<dyn Policy> { Box::new(ToyPolicy::new(snapshot.clone(), binding.clone())) }
        };
        let user_factory = |_seed: u64| -> Box<dyn Policy> { Box::new(script.policy(Role::User)) };
        let (agent_f, user_f): (&PolicyFactory, &PolicyFactory) = (&agent_factory, &user_factory);
        let groups: Vec<Group> = (0..cfg.prompts_per_batch)
            .map(|b| {
                let base = mix_seed(cfg.seed, (it * cfg.prompts_per_batch + b) as u64);
                sample_group(domain, &task, agent_f, user_f, &verifier, &rollout, base)
                    .map_err(|e| GrpoError::InvalidConfig(e.to_string()))
            })
            .collect::<Result<_, _>>()?;
        let n_eps: usize = groups.iter().map(|g| g.rewards.len()).sum();
        let mean_reward = groups.iter().flat_map(|g| &g.rewards).sum::<f64>() / n_eps as f64;

        let used: Vec<AdvantagedGroup> = if cfg.dynamic_filter {
            match dynamic_filter(groups) {
                Ok(kept) => kept,
                Err(GrpoError::EmptyBatch) => {
                    log::debug!("iteration {it}: every group degenerate, skipping update");
                    report.skipped_iterations += 1;
                    report.curve.push(CurvePoint { iteration: it, mean_reward, groups_retained: 0 });
                    continue;
                }
                Err(e) => return Err(e),
            }
        } else {
            groups.into_iter().map(AdvantagedGroup::new).collect()
        };
        report.curve.push(CurvePoint { iteration: it, mean_reward, groups_retained: used.len() });

        let batches = used.iter().map(TokenBatch::from_group).collect::<Result<Vec<_>, _>>()?;
        for _ in 0..cfg.epochs {
            let mut grad = vec![0.0; params.len()];
            let mut counted = 0usize;
            for b in &batches {
                if b.is_empty() {
                    continue;
                }
                let g = toy_policy_gradient(b, &params, cfg.epsilon)?;
                grad.iter_mut().zip(&g).for_each(|(a, x)| *a += x);
                counted += 1;
            }
            if counted > 0 {
                let n = counted as f64;
                grad.iter_mut().for_each(|x| *x /= n);
                params.ascend(&grad, cfg.learning_rate);
            }
        }
        report.last_batch = batches.iter().map(|b| rescore(b, &params)).collect::<Result<_, _>>()?;
    }
    report.params = params;
    Ok(report)
}
