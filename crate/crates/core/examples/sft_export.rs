//! SFT records for both sides of a scripted dialogue.
use tooltrain::env::{Domain, Role};
use tooltrain::grpo::{toy_task, toy_user_script};
use tooltrain::rollout::{export_sft, run_episode, write_sft, RolloutConfig, SftFormat};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let domain = Domain::toy_refund();
    let script = toy_user_script();
    let (mut a, mut u) = (script.policy(Role::Agent), script.policy(Role::User));
    let traj = run_episode(&domain, &toy_task(&domain), &mut a, &mut u, &RolloutConfig::default(), 0);
    for side in [Role::Agent, Role::User] {
        let records = export_sft(&domain, std::slice::from_ref(&traj), side)?;
        println!("--- {side}: {} records", records.len());
        print!("{}", write_sft(&records, SftFormat::Jsonl));
    }
    Ok(())
}
