//! Scoring trajectories against a checker: self-replay, a wrong id, and a paraphrase.
use serde_json::json;
use tooltrain::env::{Domain, Role, TaskSpec};
use tooltrain::grpo::toy_task;
use tooltrain::policy::{render, ParsedAction, Script};
use tooltrain::rollout::{run_episode, RolloutConfig};
use tooltrain::verifier::{fuzzy_text_match, Verifier};

fn agent_script(order: &str, reply: &str) -> Script {
    Script {
        name: "refund_agent".into(),
        agent: vec![render(&ParsedAction::function("issue_refund", json!({ "order_id": order }))), render(&ParsedAction::message(reply))],
        user: vec!["<answer>Please refund ORD-1001.</answer>".into(), "<answer>Thanks. ###STOP###</answer>".into()],
    }
}

fn score(domain: &Domain, task: &TaskSpec, script: &Script) {
    let (mut a, mut u) = (script.policy(Role::Agent), script.policy(Role::User));
    let traj = run_episode(domain, task, &mut a, &mut u, &RolloutConfig::default(), 0);
    let report = Verifier::new(domain).evaluate_submission(task.checker_spec.as_ref().unwrap(), &traj);
    println!(
        "reward {} (state {:.2}, functions {:.2}, policy {:.2})",
        report.reward, report.component_scores.state, report.component_scores.functions, report.component_scores.policy
    );
}

fn main() {
    let domain = Domain::toy_refund();
    let task = toy_task(&domain);
    score(&domain, &task, &agent_script("ORD-1001", "Refund issued."));
    score(&domain, &task, &agent_script("ORD-1001", "All done, the money is on its way back to you."));
    score(&domain, &task, &agent_script("ORD-1002", "Refund issued."));
    println!("jaccard(change of plans, plans change) = {:.3}", fuzzy_text_match("change of plans", "plans change"));
}
