use super::prompts::default_prompts;
use super::workflow::{extract_json, request_text, run_instance, SynthContext};
use super::{
    AxisScores, Backend, Critique, Finding, InstanceStatus, LineageEntry, PromptSet, Stage, SynthConfig, SynthError,
    SynthesisInstance, WorkflowPlan, WORKERS,
};
use crate::env::{Domain, RuleId};
use crate::util::{fnv1a, mix_seed};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::{BTreeSet, VecDeque};

const PLANNER_PROMPT: &str = "Design the worker workflow for the requested data. Reply with JSON {\"stages\": [stage ids in order]}.";
const ENGINEER_PROMPT: &str = "You maintain worker prompts. Reply with JSON only.";
const JUDGE_PROMPT: &str = "Score the batch on executability, tool_correctness, trajectory_coherence and difficulty_coverage, each in [0,1]. Reply with JSON {\"scores\": {...}, \"findings\": [{\"category\", \"description\", \"evidence\"}]}.";

/// Asks the planner for a stage order and validates it.
pub fn plan_workflow(backend: &Backend, request: &str, domain: &Domain, targets: &Value) -> Result<WorkflowPlan, SynthError> {
    if domain.tools().is_empty() {
        return Err(SynthError::Precondition("domain has no tool schemas".into()));
    }
    let payload = json!({
        "request": request,
        "domain": domain.name(),
        "tools": domain.tools().iter().collect::<Vec<_>>(),
        "rules": domain.rules().iter().map(|r| r.id.as_str()).collect::<Vec<_>>(),
        "targets": targets,
    });
    let text = request_text(backend, "Planner", PLANNER_PROMPT, &payload)?;
    let v = extract_json(&text).ok_or_else(|| SynthError::InvalidPlan("planner reply is not JSON".into()))?;
    let ids = v.get("stages").and_then(Value::as_array).ok_or_else(|| SynthError::InvalidPlan("no stages array".into()))?;
    let stages = ids
        .iter()
        .map(|s| {
            let s = s.as_str().unwrap_or_default();
            Stage::parse(s).ok_or_else(|| SynthError::InvalidPlan(format!("unknown stage id {s:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    WorkflowPlan::from_stages(stages)
}

/// Set 0 is the shipped prompts verbatim. Later sets ask the prompt
/// engineer for a variant that differs from every prior summary.
pub fn generate_prompt_set(backend: &Backend, plan: &WorkflowPlan, prior_summaries: &[String], k_index: usize) -> Result<PromptSet, SynthError> {
    if prior_summaries.len() != k_index {
        return Err(SynthError::Precondition(format!("set {k_index} needs {k_index} prior summaries, got {}", prior_summaries.len())));
    }
    let mut prompts = default_prompts();
    let summary = if k_index == 0 {
        "Set 0: shipped worker prompts".to_string()
    } else {
        let payload = json!({
            "mode": "diversify",
            "k_index": k_index,
            "prior_summaries": prior_summaries,
            "workers": WORKERS,
            "stages": plan.stages,
        });
        let text = request_text(backend, "PromptEngineer", ENGINEER_PROMPT, &payload)?;
        let v = extract_json(&text).unwrap_or_default();
        for (w, add) in v.get("addenda").and_then(Value::as_object).into_iter().flatten() {
            if let (Some(p), Some(add)) = (prompts.get_mut(w), add.as_str()) {
                p.push_str("\n\n");
                p.push_str(add);
            }
        }
        v.get("summary").and_then(Value::as_str).map(str::to_string).unwrap_or_else(|| format!("Set {k_index}"))
    };
    let set = PromptSet {
        set_id: k_index,
        version: 1,
        prompts,
        summary,
        lineage: vec![LineageEntry { version: 1, parent: None, critique_ids: vec![] }],
    };
    plan.check_bound(&set)?;
    Ok(set)
}

fn parse_critique(v: &Value) -> Option<(AxisScores, Vec<Finding>)> {
    let sc = v.get("scores")?;
    let f = |k: &str| sc.get(k).and_then(Value::as_f64);
    let scores = AxisScores {
        executability: f("executability")?,
        tool_correctness: f("tool_correctness")?,
        trajectory_coherence: f("trajectory_coherence")?,
        difficulty_coverage: f("difficulty_coverage")?,
    };
    if !scores.in_range() {
        return None;
    }
    let findings = v
        .get("findings")
        .and_then(Value::as_array)
        .into_iter()
        .flatten()
        .filter_map(|x| serde_json::from_value::<Finding>(x.clone()).ok())
        .filter(|x| !x.evidence.trim().is_empty())
        .collect();
    Some((scores, findings))
}

pub(crate) fn instance_summary(i: &SynthesisInstance) -> Value {
    let (ok, total) = i.tool_calls();
    json!({
        "id": i.id,
        "intent": i.task.purpose,
        "status": i.status,
        "repair_count": i.repair_count,
        "tool_ok": ok,
        "tool_total": total,
        "categories": i.categories,
    })
}

/// Scores a batch. A reply without four numeric scores in [0,1] is asked
/// for once more, then scored 0 on every axis.
pub fn judge(backend: &Backend, target: &str, instances: &[SynthesisInstance]) -> Result<Critique, SynthError> {
    let payload = json!({ "artifact_id": target, "instances": instances.iter().map(instance_summary).collect::<Vec<_>>() });
    let id = format!("{target}/critique");
    for attempt in 0..2 {
        let text = request_text(backend, "Judge", JUDGE_PROMPT, &payload)?;
        if let Some((scores, findings)) = extract_json(&text).as_ref().and_then(parse_critique) {
            return Ok(Critique { id, target: target.into(), scores, findings });
        }
        log::warn!("judge reply for {target} rejected (attempt {})", attempt + 1);
    }
    Ok(Critique { id, target: target.into(), scores: AxisScores::default(), findings: vec![] })
}

/// One revision step: version + 1, critique ids recorded in the lineage.
pub fn evolve(backend: &Backend, set: &PromptSet, critiques: &[Critique]) -> Result<PromptSet, SynthError> {
    if critiques.is_empty() {
        return Err(SynthError::Precondition("evolve needs at least one critique".into()));
    }
    let findings: Vec<&Finding> = critiques.iter().flat_map(|c| &c.findings).collect();
    let payload = json!({
        "mode": "revise",
        "set_id": set.set_id,
        "version": set.version,
        "scores": critiques.iter().map(|c| c.scores).collect::<Vec<_>>(),
        "findings": findings,
    });
    let text = request_text(backend, "PromptEngineer", ENGINEER_PROMPT, &payload)?;
    let mut next = set.clone();
    for r in extract_json(&text).and_then(|v| v.get("revisions").cloned()).and_then(|r| r.as_array().cloned()).unwrap_or_default() {
        let (Some(w), Some(t)) = (r.get("worker").and_then(Value::as_str), r.get("text").and_then(Value::as_str)) else { continue };
        if let Some(p) = next.prompts.get_mut(w) {
            if !p.contains(t) {
                p.push('\n');
                p.push_str(t);
            }
        }
    }
    next.version = set.version + 1;
    next.lineage.push(LineageEntry {
        version: next.version,
        parent: Some(set.version),
        critique_ids: critiques.iter().map(|c| c.id.clone()).collect(),
    });
    Ok(next)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PilotMetrics {
    pub iteration: u32,
    pub version: u32,
    pub infeasible_rate: f64,
    pub validity: f64,
    pub repair_rate: f64,
    pub quality: f64,
    pub accepted: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PilotOutcome {
    pub set: PromptSet,
    pub history: Vec<PilotMetrics>,
    pub converged: bool,
    pub categories_seen: BTreeSet<String>,
    pub baseline_repair_mean: f64,
    pub baseline_quality: f64,
}

fn batch_metrics(batch: &[SynthesisInstance]) -> (f64, f64, f64, f64) {
    let n = batch.len().max(1) as f64;
    let infeasible = batch.iter().filter(|i| i.status == InstanceStatus::Infeasible).count() as f64 / n;
    let (ok, total) = batch.iter().map(SynthesisInstance::tool_calls).fold((0, 0), |(a, b), (x, y)| (a + x, b + y));
    let validity = if total == 0 { 1.0 } else { ok as f64 / total as f64 };
    let feasible: Vec<_> = batch.iter().filter(|i| i.status != InstanceStatus::Infeasible).collect();
    let m = feasible.len().max(1) as f64;
    let repair_rate = feasible.iter().filter(|i| i.repair_count > 0).count() as f64 / m;
    let repair_mean = feasible.iter().map(|i| i.repair_count as f64).sum::<f64>() / m;
    (infeasible, validity, repair_rate, repair_mean)
}

/// Generate, judge, evolve on a fixed probe batch (`start..start+batch`)
/// until the stop criteria hold or the iteration cap is reached.
pub fn run_pilot(ctx: &SynthContext, set: PromptSet, batch: usize, start: usize) -> Result<PilotOutcome, SynthError> {
    let (lo, hi) = super::PILOT_BATCH_RANGE;
    if !(lo..=hi).contains(&batch) {
        return Err(SynthError::Precondition(format!("pilot batch must lie in [{lo}, {hi}], got {batch}")));
    }
    let stop = ctx.config.stop;
    let cap = ctx.config.pilot_cap().min(ctx.plan.max_evolutions);
    let mut set = set;
    let mut history: Vec<PilotMetrics> = Vec::new();
    let mut seen = BTreeSet::new();
    for iteration in 1..=cap {
        let instances = (start..start + batch)
            .into_par_iter()
            .map(|i| run_instance(ctx, &set, i))
            .collect::<Result<Vec<_>, _>>()?;
        let target = format!("set{}-v{}-pilot{iteration}", set.set_id, set.version);
        let critique = judge(&ctx.backend, &target, &instances)?;
        seen.extend(instances.iter().flat_map(|i| i.categories.iter().cloned()));
        let (infeasible, validity, repair_rate, repair_mean) = batch_metrics(&instances);
        let quality = critique.quality();
        let stable = history.last().is_some_and(|p| (p.quality - quality).abs() < stop.max_quality_delta);
        let converged = infeasible <= stop.max_infeasible && validity >= stop.min_validity && repair_rate <= stop.max_repair_rate && stable;
        history.push(PilotMetrics {
            iteration,
            version: set.version,
            infeasible_rate: infeasible,
            validity,
            repair_rate,
            quality,
            accepted: instances.iter().filter(|i| i.is_accepted()).count(),
            converged,
        });
        log::info!(
            "pilot set {} iteration {iteration}: infeasible {infeasible:.2} validity {validity:.2} repairs {repair_rate:.2} quality {quality:.3}",
            set.set_id
        );
        if converged {
            return Ok(PilotOutcome { set, history, converged, categories_seen: seen, baseline_repair_mean: repair_mean, baseline_quality: quality });
        }
        set = evolve(&ctx.backend, &set, &[critique])?;
    }
    let last = history.last().map(|p| p.quality).unwrap_or(0.0);
    Ok(PilotOutcome { set, history, converged: false, categories_seen: seen, baseline_repair_mean: 0.0, baseline_quality: last })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub set_id: usize,
    pub instance_id: String,
    pub index: usize,
    pub status: InstanceStatus,
    pub repair_count: u32,
    pub quality: f64,
    pub categories: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pause {
    pub set_id: usize,
    pub at_index: usize,
    pub reason: String,
    pub resumed_version: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleReport {
    pub instances: Vec<SynthesisInstance>,
    pub discarded: usize,
    pub attempts: usize,
    pub audit_log: Vec<AuditRecord>,
    pub pauses: Vec<Pause>,
    pub sets: Vec<PromptSet>,
}

struct Lane {
    outcome: PilotOutcome,
    cursor: usize,
    window: VecDeque<AuditRecord>,
}

const MIN_AUDITS: usize = 5;

fn drift_reason(cfg: &SynthConfig, lane: &Lane, rec: &AuditRecord) -> Option<String> {
    let d = cfg.drift;
    if let Some(c) = rec.categories.iter().find(|c| !lane.outcome.categories_seen.contains(*c)) {
        return Some(format!("new error category {c}"));
    }
    if lane.window.len() < MIN_AUDITS.min(d.window) {
        return None;
    }
    let n = lane.window.len() as f64;
    let repair = lane.window.iter().map(|r| r.repair_count as f64).sum::<f64>() / n;
    let limit = d.repair_factor * lane.outcome.baseline_repair_mean.max(d.repair_floor);
    if repair > limit {
        return Some(format!("mean repair count {repair:.2} exceeds {limit:.2}"));
    }
    let q = lane.window.iter().map(|r| r.quality).sum::<f64>() / n;
    if q < lane.outcome.baseline_quality - d.quality_drop {
        return Some(format!("audited quality {q:.3} fell below baseline {:.3}", lane.outcome.baseline_quality));
    }
    None
}

fn audited(seed: u64, id: &str, rate: f64) -> bool {
    let u = (mix_seed(seed, fnv1a(id.as_bytes())) >> 11) as f64 / (1u64 << 53) as f64;
    u < rate
}

/// Generates round-robin across converged sets until exactly `n_target`
/// instances are accepted. Audited instances feed a trailing drift window
/// per set; drift pauses that set and re-runs its pilot from the current
/// position.
pub fn run_scale(ctx: &SynthContext, pilots: Vec<PilotOutcome>, n_target: usize, audit_rate: f64) -> Result<ScaleReport, SynthError> {
    if let Some(p) = pilots.iter().find(|p| !p.converged) {
        return Err(SynthError::Precondition(format!("prompt set {} has not converged", p.set.set_id)));
    }
    if pilots.is_empty() {
        return Err(SynthError::NoConvergedSets);
    }
    if audit_rate <= 0.0 {
        log::warn!("audit rate is 0: no instances will be judged and drift cannot pause generation");
    }
    let cfg = &ctx.config;
    let mut lanes: Vec<Lane> = pilots.into_iter().map(|outcome| Lane { outcome, cursor: 0, window: VecDeque::new() }).collect();
    let mut report = ScaleReport { instances: vec![], discarded: 0, attempts: 0, audit_log: vec![], pauses: vec![], sets: vec![] };
    let max_attempts = n_target.max(1) * 40;
    while report.instances.len() < n_target {
        let jobs: Vec<(usize, usize)> = lanes
            .iter()
            .enumerate()
            .flat_map(|(l, lane)| (lane.cursor..lane.cursor + cfg.scale_chunk).map(move |i| (l, i)))
            .collect();
        let results = jobs
            .par_iter()
            .map(|&(l, i)| run_instance(ctx, &lanes[l].outcome.set, i))
            .collect::<Result<Vec<_>, _>>()?;
        let mut results = results.into_iter();
        for lane in lanes.iter_mut() {
            let chunk: Vec<SynthesisInstance> = results.by_ref().take(cfg.scale_chunk).collect();
            lane.cursor += cfg.scale_chunk;
            for inst in chunk {
                if report.instances.len() == n_target {
                    break;
                }
                report.attempts += 1;
                let index = inst.index;
                if audit_rate > 0.0 && audited(cfg.seed, &inst.id, audit_rate) {
                    let critique = judge(&ctx.backend, &inst.id, std::slice::from_ref(&inst))?;
                    let mut rec = AuditRecord {
                        set_id: inst.set_id,
                        instance_id: inst.id.clone(),
                        index,
                        status: inst.status,
                        repair_count: inst.repair_count,
                        quality: critique.quality(),
                        categories: inst.categories.clone(),
                        drift: None,
                    };
                    lane.window.push_back(rec.clone());
                    while lane.window.len() > cfg.drift.window.max(1) {
                        lane.window.pop_front();
                    }
                    rec.drift = drift_reason(cfg, lane, &rec);
                    report.audit_log.push(rec.clone());
                    if inst.is_accepted() {
                        report.instances.push(inst);
                    } else {
                        report.discarded += 1;
                    }
                    if let Some(reason) = rec.drift {
                        log::warn!("set {} paused at instance {index}: {reason}", lane.outcome.set.set_id);
                        let local = run_pilot(ctx, lane.outcome.set.clone(), cfg.pilot_batch, index + 1)?;
                        if !local.converged {
                            return Err(SynthError::DriftUnrecoverable { set_id: lane.outcome.set.set_id, reason });
                        }
                        let mut seen = lane.outcome.categories_seen.clone();
                        seen.extend(local.categories_seen.iter().cloned());
                        seen.extend(rec.categories.iter().cloned());
                        report.pauses.push(Pause {
                            set_id: local.set.set_id,
                            at_index: index,
                            reason,
                            resumed_version: local.set.version,
                        });
                        lane.outcome = PilotOutcome { categories_seen: seen, ..local };
                        lane.window.clear();
                        lane.cursor = index + 1 + cfg.pilot_batch;
                        break;
                    }
                    continue;
                }
                if inst.is_accepted() {
                    report.instances.push(inst);
                } else {
                    report.discarded += 1;
                }
            }
        }
        if report.instances.len() < n_target && report.attempts >= max_attempts {
            return Err(SynthError::Stalled { accepted: report.instances.len(), attempts: report.attempts });
        }
    }
    report.sets = lanes.into_iter().map(|l| l.outcome.set).collect();
    Ok(report)
}

/// Plan, prompt sets, pilots and scaled generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRun {
    pub plan: WorkflowPlan,
    pub config: SynthConfig,
    pub initial_sets: Vec<PromptSet>,
    pub pilots: Vec<PilotOutcome>,
    pub scale: ScaleReport,
}

pub fn run_synthesis(domain: &Domain, backend: Backend, config: &SynthConfig) -> Result<SynthesisRun, SynthError> {
    config.validate()?;
    let targets = json!({ "n_target": config.n_target, "prompt_sets": config.prompt_sets, "rules": RuleId::ALL.map(RuleId::as_str) });
    let plan = plan_workflow(&backend, "verified multi-turn tool-use tasks", domain, &targets)?;
    let ctx = SynthContext::new(domain, backend.clone(), plan.clone(), config.clone());

    let mut sets = Vec::with_capacity(config.prompt_sets);
    let mut summaries = Vec::new();
    for k in 0..config.prompt_sets {
        let set = generate_prompt_set(&backend, &plan, &summaries, k)?;
        summaries.push(set.summary.clone());
        sets.push(set);
    }

    let pilots = sets
        .par_iter()
        .map(|s| run_pilot(&ctx, s.clone(), config.pilot_batch, 0))
        .collect::<Result<Vec<_>, _>>()?;
    let converged: Vec<PilotOutcome> = pilots.iter().filter(|p| p.converged).cloned().collect();
    for p in pilots.iter().filter(|p| !p.converged) {
        log::warn!("prompt set {} did not converge in {} iterations; dropped", p.set.set_id, p.history.len());
    }
    if converged.is_empty() {
        return Err(SynthError::NoConvergedSets);
    }
    let scale = run_scale(&ctx, converged, config.n_target, config.audit_rate)?;
    Ok(SynthesisRun { plan, config: config.clone(), initial_sets: sets, pilots, scale })
}
