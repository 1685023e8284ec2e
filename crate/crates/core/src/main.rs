use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use tooltrain::bench::{run_benchmark, write_outcome, BenchConfig, Estimator, SuiteEntry, TrialCtx};
use tooltrain::env::{Domain, Role, TaskSpec};
use tooltrain::grpo::{toy_task, toy_user_script, train_toy, write_signals, GrpoConfig};
use tooltrain::policy::{ChatClient, ClientConfig, PolicySpec, Script};
use tooltrain::rollout::{
    export_sft, read_sft, read_tasks, read_trajectories, sample_group, write_sft, RolloutConfig, SftFormat,
    TrajectoryWriter,
};
use tooltrain::synth::{run_synthesis, write_archive, Backend, MockBackend, SynthConfig};
use tooltrain::util::{fnv1a, mix_seed};
use tooltrain::verifier::Verifier;

#[derive(Parser)]
#[command(name = "tooltrain", version, about = "Simulate, verify, train and evaluate tool-using agents")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate verified task instances with the three-phase pipeline.
    Synth(SynthArgs),
    /// Sample groups of episodes per task and write scored trajectories.
    Rollout(RolloutArgs),
    /// Score a trajectory file against the checkers of a task directory.
    Verify(VerifyArgs),
    /// Train the toy policy with GRPO on the refund task.
    TrainToy(TrainArgs),
    /// Run a benchmark and report pass^k / pass@k.
    Eval(EvalArgs),
    /// Turn trajectories into supervised fine-tuning records.
    ExportSft(ExportArgs),
    /// Merge SFT files from several domains into one training file.
    Concat(ConcatArgs),
}

#[derive(Args)]
struct PolicyArgs {
    /// scripted[:script.json] | toy[:params.json] | heuristic | remote:<url>
    #[arg(long, default_value = "scripted")]
    agent: String,
    #[arg(long, default_value = "scripted")]
    user: String,
    #[arg(long, default_value_t = 40)]
    max_turns: u64,
}

#[derive(Args)]
struct SynthArgs {
    /// Fixture path, or `airline` / `toy`.
    #[arg(long, default_value = "airline")]
    domain: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    n_target: usize,
    #[arg(long, default_value_t = 4)]
    prompt_sets: usize,
    #[arg(long, default_value_t = 10)]
    pilot_batch: usize,
    #[arg(long, default_value_t = 0.25)]
    audit_rate: f64,
    /// `mock` or `remote:<url>`.
    #[arg(long, default_value = "mock")]
    backend: String,
}

#[derive(Args)]
struct RolloutArgs {
    #[arg(long, default_value = "toy")]
    domain: String,
    /// Directory of task JSON files; the toy domain falls back to its refund task.
    #[arg(long)]
    tasks: Option<PathBuf>,
    /// Episodes per task (group size).
    #[arg(long, default_value_t = 4)]
    n_trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    policies: PolicyArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value = "toy")]
    domain: String,
    #[arg(long)]
    tasks: Option<PathBuf>,
    #[arg(long)]
    trajectories: PathBuf,
    /// Directory for `verification.jsonl`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value = "toy")]
    domain: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 300)]
    iterations: usize,
    #[arg(long)]
    no_filter: bool,
    #[arg(long, default_value_t = 8.0)]
    lr: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Repeat together with --tasks to evaluate several domains.
    #[arg(long, default_value = "toy")]
    domain: Vec<String>,
    #[arg(long)]
    tasks: Vec<PathBuf>,
    #[arg(long, default_value_t = 4)]
    n_trials: usize,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Estimator::Combinatorial)]
    estimator: Estimator,
    #[command(flatten)]
    policies: PolicyArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long, default_value = "toy")]
    domain: String,
    #[arg(long)]
    trajectories: PathBuf,
    #[arg(long, default_value = "agent")]
    side: String,
    /// Keep only trajectories scored at least this high.
    #[arg(long)]
    min_reward: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Jsonl)]
    format: Format,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConcatArgs {
    /// SFT files; `.json` is read as an array, anything else as JSONL.
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    shuffle: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Format {
    Jsonl,
    Json,
}

impl From<Format> for SftFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Jsonl => SftFormat::Jsonl,
            Format::Json => SftFormat::JsonArray,
        }
    }
}

fn load_domain(name: &str) -> Result<Domain> {
    Ok(match name {
        "airline" => Domain::airline(),
        "toy" => Domain::toy_refund(),
        path => Domain::load(path).with_context(|| format!("loading domain {path}"))?,
    })
}

fn load_suite(domain: &Domain, tasks: Option<&Path>) -> Result<Vec<TaskSpec>> {
    let tasks = match tasks {
        Some(dir) => read_tasks(dir).with_context(|| format!("reading tasks from {}", dir.display()))?,
        None if domain.name() == Domain::toy_refund().name() => vec![toy_task(domain)],
        None => bail!("--tasks is required for domain `{}`", domain.name()),
    };
    if tasks.is_empty() {
        bail!("no task files found");
    }
    Ok(tasks)
}

fn default_script(domain: &Domain) -> Script {
    if domain.name() == Domain::toy_refund().name() {
        toy_user_script()
    } else {
        Script::greeting()
    }
}

fn policies(args: &PolicyArgs, domain: &Domain) -> Result<(PolicySpec, PolicySpec)> {
    let script = default_script(domain);
    let agent = PolicySpec::parse(&args.agent, Role::Agent, &script).map_err(anyhow::Error::msg)?;
    let user = PolicySpec::parse(&args.user, Role::User, &script).map_err(anyhow::Error::msg)?;
    Ok((agent, user))
}

fn synth(a: SynthArgs) -> Result<()> {
    let domain = load_domain(&a.domain)?;
    let backend: Backend = match a.backend.split_once(':') {
        None if a.backend == "mock" => Arc::new(MockBackend::new(&domain)),
        Some(("remote", url)) => Arc::new(ChatClient::new(ClientConfig { url: url.into(), ..ClientConfig::default() })?),
        _ => bail!("unknown backend `{}` (expected mock or remote:<url>)", a.backend),
    };
    let cfg = SynthConfig {
        seed: a.seed,
        n_target: a.n_target,
        prompt_sets: a.prompt_sets,
        pilot_batch: a.pilot_batch,
        audit_rate: a.audit_rate,
        ..SynthConfig::default()
    };
    let run = run_synthesis(&domain, backend, &cfg)?;
    let m = write_archive(&a.out, &run)?;
    println!(
        "accepted {} of {} attempts ({} discarded, {} drift pauses) -> {}",
        m.accepted,
        m.attempts,
        m.discarded,
        m.pauses,
        a.out.display()
    );
    for s in &m.prompt_sets {
        println!("  set {} v{}: {}", s.set_id, s.final_version, s.summary);
    }
    Ok(())
}

fn rollout(a: RolloutArgs) -> Result<()> {
    let domain = load_domain(&a.domain)?;
    let tasks = load_suite(&domain, a.tasks.as_deref())?;
    let (agent, user) = policies(&a.policies, &domain)?;
    let cfg = RolloutConfig { max_turns: a.policies.max_turns, group_size: a.n_trials, ..RolloutConfig::default() };
    let verifier = Verifier::new(&domain);
    std::fs::create_dir_all(&a.out)?;
    let path = a.out.join("trajectories.jsonl");
    if path.exists() {
        std::fs::remove_file(&path)?;
    }
    let writer = TrajectoryWriter::create(&path)?;
    let (mut episodes, mut solved) = (0, 0.0);
    for task in &tasks {
        let af = |_seed: u64| agent.build(Role::Agent, &domain, task);
        let uf = |_seed: u64| user.build(Role::User, &domain, task);
        let base = mix_seed(a.seed, fnv1a(task.id.as_bytes()));
        let group = cfg.install(|| sample_group(&domain, task, &af, &uf, &verifier, &cfg, base))?;
        for t in &group.trajectories {
            writer.append(t)?;
        }
        episodes += group.rewards.len();
        solved += group.rewards.iter().sum::<f64>();
        println!("{}: rewards {:?}", task.id, group.rewards);
    }
    writer.flush()?;
    println!("{episodes} episodes, mean reward {:.3} -> {}", solved / episodes as f64, path.display());
    Ok(())
}

fn verify(a: VerifyArgs) -> Result<()> {
    let domain = load_domain(&a.domain)?;
    let tasks = load_suite(&domain, a.tasks.as_deref())?;
    let verifier = Verifier::new(&domain);
    let mut lines = String::new();
    let (mut scored, mut passed, mut unmatched) = (0, 0, 0);
    for traj in read_trajectories(&a.trajectories)? {
        let Some(task) = tasks.iter().find(|t| t.id == traj.task_id) else {
            log::warn!("no task `{}` for trajectory seed {}", traj.task_id, traj.seed);
            unmatched += 1;
            continue;
        };
        let Some(spec) = &task.checker_spec else {
            bail!("task `{}` has no checker spec", task.id);
        };
        let report = verifier.evaluate_submission(spec, &traj);
        scored += 1;
        passed += usize::from(report.reward);
        let line = serde_json::json!({ "task_id": traj.task_id, "seed": traj.seed, "report": report });
        lines.push_str(&serde_json::to_string(&line)?);
        lines.push('\n');
    }
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("verification.jsonl"), &lines)?;
    }
    println!("{passed}/{scored} trajectories pass ({unmatched} without a task)");
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let domain = load_domain(&a.domain)?;
    let cfg = GrpoConfig {
        seed: a.seed,
        iterations: a.iterations,
        dynamic_filter: !a.no_filter,
        learning_rate: a.lr,
        ..GrpoConfig::default()
    };
    let report = train_toy(&domain, &cfg)?;
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join("curve.csv"), report.curve_csv())?;
    let signals: String = report.last_batch.iter().map(write_signals).collect();
    std::fs::write(a.out.join("signals.jsonl"), signals)?;
    std::fs::write(a.out.join("params.json"), serde_json::to_string(&report.params)? + "\n")?;
    let start = report.curve.first().map_or(0.0, |p| p.mean_reward);
    let reached = report.first_reaching(0.9).map_or("never".to_string(), |i| i.to_string());
    println!(
        "reward {start:.3} -> {:.3}; first >= 0.9 at iteration {reached}; {} iterations skipped -> {}",
        report.final_reward(),
        report.skipped_iterations,
        a.out.display()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    if !a.tasks.is_empty() && a.tasks.len() != a.domain.len() {
        bail!("give one --tasks directory per --domain");
    }
    let domains: Vec<Domain> = a.domain.iter().map(|d| load_domain(d)).collect::<Result<_>>()?;
    let mut suites = Vec::new();
    for (i, d) in domains.iter().enumerate() {
        suites.push(load_suite(d, a.tasks.get(i).map(PathBuf::as_path))?);
    }
    let entries: Vec<SuiteEntry> =
        domains.iter().zip(&suites).flat_map(|(domain, ts)| ts.iter().map(move |task| SuiteEntry { domain, task })).collect();
    let (agent, user) = policies(&a.policies, &domains[0])?;
    let cfg = BenchConfig {
        n_trials: a.n_trials,
        k: a.k,
        seed: a.seed,
        estimator: a.estimator,
        rollout: RolloutConfig { max_turns: a.policies.max_turns, ..RolloutConfig::default() },
    };
    let af = |c: &TrialCtx| agent.build(Role::Agent, c.domain, c.task);
    let uf = |c: &TrialCtx| user.build(Role::User, c.domain, c.task);
    let outcome = run_benchmark(&entries, &af, &uf, &cfg)?;
    write_outcome(&a.out, &outcome)?;
    print!("{}", outcome.report.table());
    Ok(())
}

fn export(a: ExportArgs) -> Result<()> {
    let domain = load_domain(&a.domain)?;
    let side = match a.side.as_str() {
        "agent" => Role::Agent,
        "user" => Role::User,
        s => bail!("--side must be agent or user, got `{s}`"),
    };
    let mut trajs = read_trajectories(&a.trajectories)?;
    if let Some(min) = a.min_reward {
        trajs.retain(|t| t.reward.is_some_and(|r| r >= min));
    }
    let records = export_sft(&domain, &trajs, side)?;
    std::fs::write(&a.out, write_sft(&records, a.format.into()))?;
    println!("{} records from {} trajectories -> {}", records.len(), trajs.len(), a.out.display());
    Ok(())
}

fn concat(a: ConcatArgs) -> Result<()> {
    let mut all = Vec::new();
    for p in &a.inputs {
        let format = if p.extension().is_some_and(|x| x == "json") { SftFormat::JsonArray } else { SftFormat::Jsonl };
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let records = read_sft(&text, format).with_context(|| format!("parsing {}", p.display()))?;
        println!("{}: {} records", p.display(), records.len());
        all.extend(records);
    }
    if a.shuffle {
        all.shuffle(&mut ChaCha8Rng::seed_from_u64(a.seed));
    }
    std::fs::write(&a.out, write_sft(&all, SftFormat::Jsonl))?;
    println!("{} records -> {}", all.len(), a.out.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().cmd {
        Cmd::Synth(a) => synth(a),
        Cmd::Rollout(a) => rollout(a),
        Cmd::Verify(a) => verify(a),
        Cmd::TrainToy(a) => train(a),
        Cmd::Eval(a) => eval(a),
        Cmd::ExportSft(a) => export(a),
        Cmd::Concat(a) => concat(a),
    }
}
