//! Self-evolving task synthesis.
//!
//! Three orchestration roles (planner, prompt engineer, judge) steer seven
//! worker stages over any [`ChatBackend`]. Tool-grounded stages replay
//! their claims through the environment before accepting them. The
//! [`MockBackend`] stands in for a model in tests and demos; it is
//! stateless, so a whole run is reproducible from its seed.

mod archive;
mod mock;
mod orchestrate;
mod prompts;
mod workflow;

pub use archive::{write_archive, Manifest};
pub use mock::{MockBackend, MockKnobs};
pub use orchestrate::{
    evolve, generate_prompt_set, judge, plan_workflow, run_pilot, run_scale, run_synthesis, AuditRecord, Pause, PilotMetrics,
    PilotOutcome, ScaleReport, SynthesisRun,
};
pub use prompts::{default_prompts, Stage, WORKERS};
pub use workflow::{repair_loop, run_instance, run_stage, Artifact, Draft, Repair, SynthContext, Validation};

use crate::env::TaskSpec;
use crate::policy::ChatBackend;
use crate::rollout::Trajectory;
use crate::verifier::CheckerSpec;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::{BTreeMap, BTreeSet};

/// Hard caps applied whatever a plan or config asks for.
pub const MAX_REPAIRS: u32 = 3;
pub const MAX_EVOLUTIONS: u32 = 16;
pub const PILOT_BATCH_RANGE: (usize, usize) = (5, 20);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("backend failure: {0}")]
    BackendFailure(String),
    #[error("{stage:?} output violates its contract: {detail}")]
    ContractViolation { stage: Stage, detail: String, artifact: Option<Value> },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("prompt set {set_id} drifted and did not reconverge: {reason}")]
    DriftUnrecoverable { set_id: usize, reason: String },
    #[error("no prompt set converged during the pilot phase")]
    NoConvergedSets,
    #[error("generation stalled: {accepted} accepted after {attempts} attempts")]
    Stalled { accepted: usize, attempts: usize },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for SynthError {
    fn from(e: std::io::Error) -> Self {
        SynthError::Io(e.to_string())
    }
}

/// Ordered stages, the workers bound to each, and loop bounds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowPlan {
    pub stages: Vec<Stage>,
    pub bindings: BTreeMap<Stage, Vec<String>>,
    pub max_repairs: u32,
    pub max_evolutions: u32,
}

impl WorkflowPlan {
    pub fn canonical() -> Self {
        Self::from_stages(Stage::CANONICAL.to_vec()).expect("canonical chain is valid")
    }

    /// Accepts any permutation of the seven stages that ends in
    /// ValidationFunction.
    pub fn from_stages(stages: Vec<Stage>) -> Result<Self, SynthError> {
        let distinct: BTreeSet<Stage> = stages.iter().copied().collect();
        if distinct.len() != stages.len() {
            return Err(SynthError::InvalidPlan("duplicate stage".into()));
        }
        if let Some(missing) = Stage::CANONICAL.iter().find(|s| !distinct.contains(s)) {
            return Err(SynthError::InvalidPlan(format!("missing stage {missing:?}")));
        }
        if stages.last() != Some(&Stage::ValidationFunction) {
            return Err(SynthError::InvalidPlan("plan must end in ValidationFunction".into()));
        }
        let bindings = stages.iter().map(|s| (*s, s.workers().iter().map(|w| w.to_string()).collect())).collect();
        Ok(WorkflowPlan { stages, bindings, max_repairs: MAX_REPAIRS, max_evolutions: MAX_EVOLUTIONS })
    }

    /// Every bound worker has a prompt in `set`.
    pub fn check_bound(&self, set: &PromptSet) -> Result<(), SynthError> {
        for w in self.bindings.values().flatten() {
            if !set.prompts.contains_key(w) {
                return Err(SynthError::InvalidPlan(format!("worker {w} has no prompt")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageEntry {
    pub version: u32,
    pub parent: Option<u32>,
    pub critique_ids: Vec<String>,
}

/// Per-worker prompt texts with their revision history.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub set_id: usize,
    pub version: u32,
    pub prompts: BTreeMap<String, String>,
    pub summary: String,
    pub lineage: Vec<LineageEntry>,
}

impl PromptSet {
    pub fn prompt(&self, worker: &str) -> &str {
        self.prompts.get(worker).map(String::as_str).unwrap_or_default()
    }

    /// Versions are 1, 2, … and each names its predecessor.
    pub fn lineage_is_valid(&self) -> bool {
        self.lineage.iter().enumerate().all(|(i, e)| {
            e.version == i as u32 + 1 && e.parent == if i == 0 { None } else { Some(i as u32) }
        }) && self.lineage.last().map(|e| e.version) == Some(self.version)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AxisScores {
    pub executability: f64,
    pub tool_correctness: f64,
    pub trajectory_coherence: f64,
    pub difficulty_coverage: f64,
}

impl AxisScores {
    pub fn mean(&self) -> f64 {
        (self.executability + self.tool_correctness + self.trajectory_coherence + self.difficulty_coverage) / 4.0
    }

    pub fn in_range(&self) -> bool {
        [self.executability, self.tool_correctness, self.trajectory_coherence, self.difficulty_coverage]
            .iter()
            .all(|x| x.is_finite() && (0.0..=1.0).contains(x))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub category: String,
    pub description: String,
    pub evidence: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Critique {
    pub id: String,
    pub target: String,
    pub scores: AxisScores,
    pub findings: Vec<Finding>,
}

impl Critique {
    pub fn quality(&self) -> f64 {
        self.scores.mean()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub category: String,
    pub description: String,
}

impl Issue {
    pub fn new(category: &str, description: impl Into<String>) -> Self {
        Issue { category: category.into(), description: description.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Feasibility {
    /// Evidence lists each replayed call and its outcome.
    Feasible { evidence: Vec<String> },
    Infeasible { category: String, evidence: Vec<String> },
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceStatus {
    Accepted,
    Infeasible,
    Discarded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisInstance {
    pub id: String,
    pub set_id: usize,
    pub prompt_version: u32,
    pub index: usize,
    pub scenario_seed: Value,
    pub task: TaskSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feasibility: Option<Feasibility>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Trajectory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checker_spec: Option<CheckerSpec>,
    pub status: InstanceStatus,
    pub repair_count: u32,
    /// Every issue category met along the way, repaired or not.
    pub categories: BTreeSet<String>,
}

impl SynthesisInstance {
    pub fn is_accepted(&self) -> bool {
        self.status == InstanceStatus::Accepted
    }

    /// The task with its checker attached, ready for rollouts.
    pub fn task_with_checker(&self) -> TaskSpec {
        let mut t = self.task.clone();
        t.checker_spec = self.checker_spec.clone();
        t
    }

    /// `(ok, total)` tool calls in the final dialogue.
    pub fn tool_calls(&self) -> (usize, usize) {
        let Some(t) = &self.trajectory else { return (0, 0) };
        let results: Vec<bool> = t.turns.iter().filter_map(|x| x.tool_result.as_ref().map(|r| r.ok)).collect();
        (results.iter().filter(|ok| **ok).count(), results.len())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StopCriteria {
    pub max_infeasible: f64,
    pub min_validity: f64,
    pub max_repair_rate: f64,
    pub max_quality_delta: f64,
}

impl Default for StopCriteria {
    fn default() -> Self {
        StopCriteria { max_infeasible: 0.1, min_validity: 0.95, max_repair_rate: 0.2, max_quality_delta: 0.05 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftConfig {
    pub window: usize,
    pub repair_factor: f64,
    /// Lower bound on the baseline repair mean, so a clean pilot does not
    /// make a single repair look like a doubling.
    pub repair_floor: f64,
    pub quality_drop: f64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        DriftConfig { window: 20, repair_factor: 2.0, repair_floor: 0.25, quality_drop: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub prompt_sets: usize,
    pub pilot_batch: usize,
    pub max_pilot_iterations: u32,
    pub max_repairs: u32,
    pub n_target: usize,
    pub audit_rate: f64,
    pub max_turns: u64,
    /// Instances generated per set between drift checks.
    pub scale_chunk: usize,
    pub stop: StopCriteria,
    pub drift: DriftConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            prompt_sets: 4,
            pilot_batch: 10,
            max_pilot_iterations: MAX_EVOLUTIONS,
            max_repairs: MAX_REPAIRS,
            n_target: 50,
            audit_rate: 0.25,
            max_turns: 30,
            scale_chunk: 8,
            stop: StopCriteria::default(),
            drift: DriftConfig::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let (lo, hi) = PILOT_BATCH_RANGE;
        if !(lo..=hi).contains(&self.pilot_batch) {
            return Err(SynthError::Precondition(format!("pilot batch must lie in [{lo}, {hi}], got {}", self.pilot_batch)));
        }
        if self.prompt_sets == 0 || self.scale_chunk == 0 || self.max_turns == 0 {
            return Err(SynthError::Precondition("prompt_sets, scale_chunk and max_turns must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.audit_rate) {
            return Err(SynthError::Precondition("audit_rate must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn repair_cap(&self) -> u32 {
        self.max_repairs.min(MAX_REPAIRS)
    }

    pub fn pilot_cap(&self) -> u32 {
        self.max_pilot_iterations.clamp(1, MAX_EVOLUTIONS)
    }
}

/// Shared handle for a backend.
pub type Backend = std::sync::Arc<dyn ChatBackend>;
