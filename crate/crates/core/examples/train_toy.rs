//! GRPO on the toy refund desk, with and without dynamic filtering.
use tooltrain::env::Domain;
use tooltrain::grpo::{train_toy, GrpoConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let domain = Domain::toy_refund();
    let iterations = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    for filter in [true, false] {
        let cfg = GrpoConfig { dynamic_filter: filter, iterations, ..GrpoConfig::default() };
        let r = train_toy(&domain, &cfg)?;
        println!(
            "filter={filter}: start {:.3}, final {:.3}, first >= 0.9 at {:?}, skipped {}",
            r.curve[0].mean_reward,
            r.final_reward(),
            r.first_reaching(0.9),
            r.skipped_iterations
        );
        for p in r.curve.iter().step_by((iterations / 10).max(1)) {
            println!("  it {:>3}  reward {:.3}  groups {}", p.iteration, p.mean_reward, p.groups_retained);
        }
    }
    Ok(())
}
