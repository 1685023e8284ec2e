//! Three-phase synthesis against the deterministic mock backend.
use std::sync::Arc;
use tooltrain::env::Domain;
use tooltrain::synth::{run_synthesis, write_archive, MockBackend, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let domain = Domain::airline();
    let backend = Arc::new(MockBackend::new(&domain));
    println!("mock scenario pool: {}", backend.pool_size());
    let cfg = SynthConfig::default();
    let t = std::time::Instant::now();
    let run = run_synthesis(&domain, backend, &cfg)?;
    for p in &run.pilots {
        for m in &p.history {
            println!(
                "set {} it {} v{}: infeasible {:.2} validity {:.2} repairs {:.2} quality {:.3}{}",
                p.set.set_id, m.iteration, m.version, m.infeasible_rate, m.validity, m.repair_rate, m.quality,
                if m.converged { " converged" } else { "" }
            );
        }
    }
    let out = std::env::temp_dir().join("tooltrain-synth-demo");
    let manifest = write_archive(&out, &run)?;
    println!(
        "accepted {} discarded {} attempts {} pauses {} in {:.1}s -> {}",
        manifest.accepted, manifest.discarded, manifest.attempts, manifest.pauses, t.elapsed().as_secs_f64(), out.display()
    );
    Ok(())
}
