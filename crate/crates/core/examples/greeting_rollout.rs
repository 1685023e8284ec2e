//! A scripted agent/user pair played through one episode, then sampled as a group.
use tooltrain::env::{Domain, Role, TaskSpec};
use tooltrain::policy::Script;
use tooltrain::rollout::{run_episode, sample_group, RolloutConfig};
use tooltrain::verifier::{CheckerSpec, Verifier};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let domain = Domain::airline();
    let script = Script::greeting();
    let mut task = TaskSpec { id: "greeting".into(), reason_for_call: "check the desk".into(), ..TaskSpec::default() };
    let cfg = RolloutConfig { group_size: 4, ..RolloutConfig::default() };

    let (mut agent, mut user) = (script.policy(Role::Agent), script.policy(Role::User));
    let traj = run_episode(&domain, &task, &mut agent, &mut user, &cfg, 7);
    for t in &traj.turns {
        println!("[{}] {}", t.actor, t.raw_text);
    }
    println!("termination {:?} after {} turns", traj.termination, traj.turns.len());

    task.checker_spec = Some(CheckerSpec::new(traj.final_state.clone()));
    let agents = |_| Box::new(script.policy(Role::Agent)) as Box<dyn tooltrain::policy::Policy>;
    let users = |_| Box::new(script.policy(Role::User)) as Box<dyn tooltrain::policy::Policy>;
    let group = sample_group(&domain, &task, &agents, &users, &Verifier::new(&domain), &cfg, 100)?;
    println!("group rewards {:?}", group.rewards);
    Ok(())
}
