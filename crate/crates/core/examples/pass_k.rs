//! pass^k and pass@k on a small matrix, then a scripted benchmark on the toy desk.
use tooltrain::bench::{pass_at_k, pass_hat_k, run_benchmark, BenchConfig, SuiteEntry, TrialCtx, TrialMatrix};
use tooltrain::env::{Domain, Role};
use tooltrain::grpo::{toy_task, toy_user_script};
use tooltrain::policy::{Policy, ToyPolicy, ToyPolicyParams};
use std::sync::Arc;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let m = TrialMatrix::from_counts(&[(4, 4), (4, 3), (4, 2), (4, 0)])?;
    for k in 1..=4 {
        println!("k={k}: pass^k {:.4}  pass@k {:.4}", pass_hat_k(&m, k)?, pass_at_k(&m, k)?);
    }

    let domain = Domain::toy_refund();
    let task = toy_task(&domain);
    let suite = [SuiteEntry { domain: &domain, task: &task }];
    let params = Arc::new(ToyPolicyParams::for_domain(&domain));
    let agent = |c: &TrialCtx| Box::new(ToyPolicy::new(params.clone(), tooltrain::policy::binding_from(c.task))) as Box<dyn Policy>;
    let user = |_: &TrialCtx| Box::new(toy_user_script().policy(Role::User)) as Box<dyn Policy>;
    let cfg = BenchConfig { n_trials: 8, k: 4, ..BenchConfig::default() };
    let out = run_benchmark(&suite, &agent, &user, &cfg)?;
    print!("{}", out.report.table());
    Ok(())
}
