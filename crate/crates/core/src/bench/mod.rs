//! pass^k / pass@k metrics and the benchmark runner.

mod metrics;
mod report;

pub use metrics::{binomial, pass_at_k, pass_hat_k, pass_hat_k_with, Estimator};
pub use report::{EvalReport, MetricSet, RunMeta};

use crate::env::{Domain, TaskSpec};
use crate::policy::Policy;
use crate::rollout::{run_episode, RolloutConfig, Trajectory};
use crate::util::{fnv1a, mix_seed};
use crate::verifier::Verifier;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("k = {k} exceeds the {n} trials recorded for `{task}`")]
    KExceedsTrials { k: usize, n: usize, task: String },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("invalid trial matrix: {0}")]
    InvalidMatrix(String),
    #[error("invalid benchmark config: {0}")]
    InvalidConfig(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Trial outcomes of one task, in trial order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskTrials {
    pub task_id: String,
    pub domain: String,
    pub outcomes: Vec<bool>,
    /// `task_id#seed` of each trial's trajectory.
    #[serde(default)]
    pub trajectory_refs: Vec<String>,
}

impl TaskTrials {
    pub fn new(task_id: impl Into<String>, domain: impl Into<String>, outcomes: Vec<bool>) -> Self {
        TaskTrials { task_id: task_id.into(), domain: domain.into(), outcomes, trajectory_refs: Vec::new() }
    }

    pub fn n(&self) -> usize {
        self.outcomes.len()
    }

    pub fn c(&self) -> usize {
        self.outcomes.iter().filter(|&&o| o).count()
    }
}

/// Per-task success counts with a common trial count.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialMatrix {
    tasks: Vec<TaskTrials>,
}

impl TrialMatrix {
    pub fn new(tasks: Vec<TaskTrials>) -> Result<Self, BenchError> {
        if tasks.is_empty() {
            return Err(BenchError::InvalidMatrix("no tasks".into()));
        }
        let n = tasks[0].n();
        if n == 0 {
            return Err(BenchError::InvalidMatrix("zero trials per task".into()));
        }
        if let Some(t) = tasks.iter().find(|t| t.n() != n) {
            return Err(BenchError::InvalidMatrix(format!("`{}` has {} trials, expected {n}", t.task_id, t.n())));
        }
        Ok(TrialMatrix { tasks })
    }

    /// Builds a matrix from `(n, c)` counts; successes come first in each row.
    pub fn from_counts(counts: &[(usize, usize)]) -> Result<Self, BenchError> {
        let mut tasks = Vec::with_capacity(counts.len());
        for (i, &(n, c)) in counts.iter().enumerate() {
            if c > n {
                return Err(BenchError::InvalidMatrix(format!("task {i}: c = {c} > n = {n}")));
            }
            tasks.push(TaskTrials::new(format!("task_{i}"), "default", (0..n).map(|j| j < c).collect()));
        }
        Self::new(tasks)
    }

    pub fn tasks(&self) -> &[TaskTrials] {
        &self.tasks
    }

    pub fn n(&self) -> usize {
        self.tasks[0].n()
    }

    pub fn domains(&self) -> Vec<String> {
        let mut d: Vec<String> = self.tasks.iter().map(|t| t.domain.clone()).collect();
        d.sort();
        d.dedup();
        d
    }

    /// Rows of one domain, or `None` if it has no tasks.
    pub fn restrict(&self, domain: &str) -> Option<TrialMatrix> {
        let tasks: Vec<TaskTrials> = self.tasks.iter().filter(|t| t.domain == domain).cloned().collect();
        (!tasks.is_empty()).then_some(TrialMatrix { tasks })
    }
}

/// One task of a suite with the domain it runs in.
#[derive(Clone, Copy)]
pub struct SuiteEntry<'a> {
    pub domain: &'a Domain,
    pub task: &'a TaskSpec,
}

/// What a policy factory is told about the trial it serves.
#[derive(Clone, Copy)]
pub struct TrialCtx<'a> {
    pub domain: &'a Domain,
    pub task: &'a TaskSpec,
    pub trial: usize,
    pub seed: u64,
}

pub type TrialPolicyFactory<'a> = dyn Fn(&TrialCtx) -> Box<dyn Policy> + Sync + 'a;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub n_trials: usize,
    pub k: usize,
    pub seed: u64,
    pub estimator: Estimator,
    pub rollout: RolloutConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { n_trials: 4, k: 4, seed: 0, estimator: Estimator::Combinatorial, rollout: RolloutConfig::default() }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.k == 0 {
            return Err(BenchError::ZeroK);
        }
        if self.n_trials < self.k {
            return Err(BenchError::InvalidConfig(format!("n_trials = {} is below k = {}", self.n_trials, self.k)));
        }
        if self.rollout.max_turns == 0 || self.rollout.worker_cap == 0 {
            return Err(BenchError::InvalidConfig("rollout max_turns and worker_cap must be positive".into()));
        }
        Ok(())
    }
}

/// Seed of trial `trial` of `task_id`; independent of suite order.
pub fn trial_seed(seed: u64, task_id: &str, trial: usize) -> u64 {
    mix_seed(mix_seed(seed, fnv1a(task_id.as_bytes())), trial as u64)
}

pub struct BenchOutcome {
    pub matrix: TrialMatrix,
    pub report: EvalReport,
    /// Scored trajectories in (task, trial) order.
    pub trajectories: Vec<Trajectory>,
}

pub fn run_benchmark(
    suite: &[SuiteEntry],
    agent: &TrialPolicyFactory,
    user: &TrialPolicyFactory,
    cfg: &BenchConfig,
) -> Result<BenchOutcome, BenchError> {
    cfg.validate()?;
    if suite.is_empty() {
        return Err(BenchError::InvalidConfig("empty task suite".into()));
    }
    let verifiers: BTreeMap<&str, Verifier> = suite.iter().map(|e| (e.domain.name(), Verifier::new(e.domain))).collect();
    let jobs: Vec<(usize, usize)> = (0..suite.len()).flat_map(|i| (0..cfg.n_trials).map(move |t| (i, t))).collect();
    let trajectories: Vec<Trajectory> = cfg.rollout.install(|| {
        jobs.par_iter()
            .map(|&(i, trial)| {
                let e = suite[i];
                let seed = trial_seed(cfg.seed, &e.task.id, trial);
                let ctx = TrialCtx { domain: e.domain, task: e.task, trial, seed };
                let (mut a, mut u) = (agent(&ctx), user(&ctx));
                let mut t = run_episode(e.domain, e.task, a.as_mut(), u.as_mut(), &cfg.rollout, seed);
                t.reward = Some(verifiers[e.domain.name()].reward(e.task, &t));
                t
            })
            .collect()
    });
    let rows = suite
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let trials = &trajectories[i * cfg.n_trials..(i + 1) * cfg.n_trials];
            TaskTrials {
                task_id: e.task.id.clone(),
                domain: e.domain.name().to_string(),
                outcomes: trials.iter().map(|t| t.reward == Some(1.0)).collect(),
                trajectory_refs: trials.iter().map(|t| format!("{}#{}", t.task_id, t.seed)).collect(),
            }
        })
        .collect();
    let matrix = TrialMatrix::new(rows)?;
    let probe = TrialCtx { domain: suite[0].domain, task: suite[0].task, trial: 0, seed: cfg.seed };
    let meta = RunMeta {
        seed: cfg.seed,
        n_trials: cfg.n_trials,
        k: cfg.k,
        estimator: cfg.estimator,
        agent: agent(&probe).id(),
        user: user(&probe).id(),
        tasks: suite.len(),
    };
    let report = EvalReport::compute(&matrix, meta)?;
    Ok(BenchOutcome { matrix, report, trajectories })
}

/// Writes `report.json`, `report.txt`, `matrix.json` and `trajectories.jsonl`.
pub fn write_outcome(dir: impl AsRef<Path>, outcome: &BenchOutcome) -> Result<(), BenchError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), outcome.report.to_json() + "\n")?;
    std::fs::write(dir.join("report.txt"), outcome.report.table())?;
    std::fs::write(dir.join("matrix.json"), serde_json::to_string_pretty(&outcome.matrix)? + "\n")?;
    let lines: String = outcome.trajectories.iter().map(|t| t.to_json_line() + "\n").collect();
    std::fs::write(dir.join("trajectories.jsonl"), lines)?;
    Ok(())
}
