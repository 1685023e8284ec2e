use super::{
    Backend, Feasibility, InstanceStatus, Issue, PromptSet, Stage, SynthConfig, SynthError, SynthesisInstance, WorkflowPlan,
};
use crate::env::{canonical_json, Domain, EnvError, Role, TaskSpec, ToolCall};
use crate::policy::{ChatMessage, ChatPolicy};
use crate::rollout::{run_episode, RolloutConfig, Trajectory};
use crate::util::{fnv1a, mix_seed};
use crate::verifier::{derive_key_functions, extract_function_calls, CheckerSpec, FieldClass, Verifier};
use serde_json::{json, Value};
use std::collections::{BTreeMap, BTreeSet};

/// Everything a stage needs besides its input.
#[derive(Clone)]
pub struct SynthContext {
    pub domain: Domain,
    pub backend: Backend,
    pub plan: WorkflowPlan,
    pub config: SynthConfig,
    verifier: Verifier,
}

impl SynthContext {
    pub fn new(domain: &Domain, backend: Backend, plan: WorkflowPlan, config: SynthConfig) -> Self {
        SynthContext { verifier: Verifier::new(domain), domain: domain.clone(), backend, plan, config }
    }

    pub fn verifier(&self) -> &Verifier {
        &self.verifier
    }
}

pub(crate) fn request_text(backend: &Backend, worker: &str, prompt: &str, payload: &Value) -> Result<String, SynthError> {
    let messages = vec![
        ChatMessage::system(format!("Worker: {worker}\n{prompt}")),
        ChatMessage::user(canonical_json(payload)),
    ];
    backend.complete(&messages, 0.0).map_err(|e| SynthError::BackendFailure(e.to_string()))
}

/// First `{` to last `}`; models like to wrap JSON in prose or fences.
pub(crate) fn extract_json(text: &str) -> Option<Value> {
    let (a, b) = (text.find('{')?, text.rfind('}')?);
    (a < b).then(|| serde_json::from_str(&text[a..=b]).ok()).flatten()
}

fn request_json(backend: &Backend, stage: Stage, worker: &str, prompt: &str, payload: &Value) -> Result<Value, SynthError> {
    let text = request_text(backend, worker, prompt, payload)?;
    extract_json(&text).filter(Value::is_object).ok_or_else(|| SynthError::ContractViolation {
        stage,
        detail: "response carries no JSON object".into(),
        artifact: None,
    })
}

/// Work in progress for one instance.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Draft {
    pub id: String,
    pub set_id: usize,
    pub index: usize,
    pub version: u32,
    pub seed: Option<Value>,
    pub task_json: Option<Value>,
    pub task: Option<TaskSpec>,
    pub feasibility: Option<Feasibility>,
    pub trajectory: Option<Trajectory>,
    pub categories: BTreeSet<String>,
}

impl Draft {
    pub fn new(set: &PromptSet, index: usize) -> Self {
        Draft {
            id: format!("set{}-{index:05}", set.set_id),
            set_id: set.set_id,
            index,
            version: set.version,
            ..Draft::default()
        }
    }

    fn dialog_seed(&self, base: u64) -> u64 {
        mix_seed(base, fnv1a(self.id.as_bytes()))
    }
}

/// Output of one stage.
#[derive(Clone, Debug, PartialEq)]
pub enum Artifact {
    Seed(Value),
    Task(Value),
    Verdict(Feasibility),
    Dialogue(Box<Trajectory>),
    Validation(Vec<Issue>),
    Checker(Box<CheckerSpec>),
}

const TASK_FIELDS: [&str; 5] = ["context", "purpose", "reason_for_call", "known_info", "task_instructions"];

/// Schema check for UserIntent and Modify output.
pub(crate) fn task_from_json(domain: &Domain, id: &str, v: &Value) -> Result<TaskSpec, String> {
    let obj = v.as_object().ok_or("task is not an object")?;
    for f in TASK_FIELDS {
        if obj.get(f).and_then(Value::as_str).map_or(true, |s| s.trim().is_empty()) {
            return Err(format!("missing field {f}"));
        }
    }
    let mut t: TaskSpec = serde_json::from_value(v.clone()).map_err(|e| e.to_string())?;
    if let Some(bad) = t.must_have_functions.iter().find(|f| !domain.tools().contains(f)) {
        return Err(format!("unknown function {bad}"));
    }
    t.id = id.to_string();
    t.checker_spec = None;
    Ok(t)
}

fn missing_input(stage: Stage, what: &str) -> SynthError {
    SynthError::Precondition(format!("{stage:?} needs {what}"))
}

fn env_category(e: &EnvError) -> &'static str {
    match e {
        EnvError::UnknownDomainEntity(_) | EnvError::EntityNotFound { .. } => "missing_resource",
        EnvError::PolicyRejection { .. } => "policy_violation",
        _ => "contradictory_constraints",
    }
}

/// Runs one stage against the draft. Tool-grounded stages (TaskValidation,
/// ValidationFunction) take only proposals from the backend and settle
/// them by executing in the environment.
pub fn run_stage(ctx: &SynthContext, set: &PromptSet, stage: Stage, d: &Draft) -> Result<Artifact, SynthError> {
    let b = &ctx.backend;
    let prompt = |w: &str| set.prompt(w).to_string();
    match stage {
        Stage::RandomPool => {
            let mut kinds: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
            for (id, e) in &ctx.domain.fixture().entities {
                kinds.entry(e.kind()).or_default().push(id);
            }
            let payload = json!({
                "set_id": d.set_id,
                "instance_index": d.index,
                "prompt_version": d.version,
                "seed": mix_seed(ctx.config.seed, d.index as u64),
                "domain": ctx.domain.name(),
                "entities": kinds,
            });
            let v = request_json(b, stage, "RandomPool", &prompt("RandomPool"), &payload)?;
            if v.get("intent").and_then(Value::as_str).is_none() {
                return Err(SynthError::ContractViolation { stage, detail: "seed lacks an intent".into(), artifact: Some(v) });
            }
            Ok(Artifact::Seed(v))
        }
        Stage::UserIntent => {
            let seed = d.seed.as_ref().ok_or_else(|| missing_input(stage, "a scenario seed"))?;
            let payload = json!({ "scenario_seed": seed, "instance_index": d.index, "prompt_version": d.version });
            let v = request_json(b, stage, "UserIntent", &prompt("UserIntent"), &payload)?;
            match task_from_json(&ctx.domain, &d.id, &v) {
                Ok(_) => Ok(Artifact::Task(v)),
                Err(detail) => Err(SynthError::ContractViolation { stage, detail, artifact: Some(v) }),
            }
        }
        Stage::TaskValidation => {
            let task = d.task.as_ref().ok_or_else(|| missing_input(stage, "a task"))?;
            let state = match ctx.domain.reset(task, d.dialog_seed(ctx.config.seed)) {
                Ok(s) => s,
                Err(e) => {
                    return Ok(Artifact::Verdict(Feasibility::Infeasible {
                        category: env_category(&e).into(),
                        evidence: vec![format!("reset failed: {e}")],
                    }))
                }
            };
            let payload = json!({ "task": task, "scenario_seed": d.seed });
            let v = request_json(b, stage, "TaskValidation", &prompt("TaskValidation"), &payload)?;
            let plan = v.get("solution_plan").and_then(Value::as_array).ok_or_else(|| SynthError::ContractViolation {
                stage,
                detail: "no solution_plan array".into(),
                artifact: Some(v.clone()),
            })?;
            let mut state = state;
            let mut evidence = Vec::new();
            let mut succeeded = BTreeSet::new();
            for step in plan {
                let name = step.get("name").and_then(Value::as_str).unwrap_or_default();
                let args = step.get("arguments").cloned().unwrap_or_else(|| json!({}));
                let call = ToolCall::new(name, args.clone(), Role::Agent);
                match ctx.domain.execute_tool(&state, &call) {
                    Ok((next, _)) => {
                        evidence.push(format!("{name}({}) -> ok", canonical_json(&args)));
                        succeeded.insert(name.to_string());
                        state = next;
                    }
                    Err(e) => {
                        evidence.push(format!("{name}({}) -> {e}", canonical_json(&args)));
                        return Ok(Artifact::Verdict(Feasibility::Infeasible { category: env_category(&e).into(), evidence }));
                    }
                }
            }
            if let Some(f) = task.must_have_functions.iter().find(|f| !succeeded.contains(*f)) {
                evidence.push(format!("solution plan never completes {f}"));
                return Ok(Artifact::Verdict(Feasibility::Infeasible { category: "contradictory_constraints".into(), evidence }));
            }
            Ok(Artifact::Verdict(Feasibility::Feasible { evidence }))
        }
        Stage::DialogSynthesis => {
            let task = d.task.as_ref().ok_or_else(|| missing_input(stage, "a task"))?;
            let mut agent = ChatPolicy::new(Role::Agent, b.clone(), "synth:trajectory")
                .with_prompt(Some("Trajectory"), prompt("Trajectory"));
            let mut user = ChatPolicy::new(Role::User, b.clone(), "synth:user")
                .with_prompt(Some("UserSimulator"), prompt("UserSimulator"));
            let cfg = RolloutConfig { max_turns: ctx.config.max_turns, ..RolloutConfig::default() };
            let traj = run_episode(&ctx.domain, task, &mut agent, &mut user, &cfg, d.dialog_seed(ctx.config.seed));
            if let Some(e) = traj.error.as_deref().filter(|e| e.contains("unavailable")) {
                return Err(SynthError::BackendFailure(e.to_string()));
            }
            Ok(Artifact::Dialogue(Box::new(traj)))
        }
        Stage::TrajectoryValidation => {
            let task = d.task.as_ref().ok_or_else(|| missing_input(stage, "a task"))?;
            let traj = d.trajectory.as_ref().ok_or_else(|| missing_input(stage, "a dialogue"))?;
            let calls = extract_function_calls(traj);
            let mut issues = Vec::new();
            if matches!(traj.termination.as_str(), "error" | "max_turns") {
                issues.push(Issue::new("dialog_failure", format!("dialogue ended with {}", traj.termination.as_str())));
            }
            for f in &task.must_have_functions {
                if !calls.iter().any(|c| c.ok && &c.name == f) {
                    issues.push(Issue::new("missing_required_call", format!("{f} never succeeded")));
                }
            }
            let payload = json!({
                "task": task,
                "termination": traj.termination,
                "calls": calls.iter().map(|c| json!({ "name": c.name, "ok": c.ok, "actor": c.actor })).collect::<Vec<_>>(),
                "must_have_functions": task.must_have_functions,
            });
            let v = request_json(b, stage, "TrajectoryValidation", &prompt("TrajectoryValidation"), &payload)?;
            match v.get("verdict").and_then(Value::as_str) {
                Some("PASS") | Some("FAIL") => {}
                _ => {
                    return Err(SynthError::ContractViolation { stage, detail: "verdict must be PASS or FAIL".into(), artifact: Some(v) })
                }
            }
            for i in v.get("issues").and_then(Value::as_array).into_iter().flatten() {
                let cat = i.get("category").and_then(Value::as_str).unwrap_or("unspecified");
                if !issues.iter().any(|x: &Issue| x.category == cat) {
                    let desc = i.get("description").and_then(Value::as_str).unwrap_or_default();
                    issues.push(Issue::new(cat, desc));
                }
            }
            Ok(Artifact::Validation(issues))
        }
        Stage::Modify => Err(SynthError::Precondition("Modify runs through repair_loop".into())),
        Stage::ValidationFunction => {
            let task = d.task.as_ref().ok_or_else(|| missing_input(stage, "a task"))?;
            let traj = d.trajectory.as_ref().ok_or_else(|| missing_input(stage, "a dialogue"))?;
            let calls = extract_function_calls(traj);
            let payload = json!({
                "task": task,
                "calls": calls.iter().map(|c| json!({ "name": c.name, "arguments": c.arguments, "ok": c.ok })).collect::<Vec<_>>(),
            });
            let v = request_json(b, stage, "VerificationFunction", &prompt("VerificationFunction"), &payload)?;
            let initial = ctx.domain.reset(task, traj.seed).map_err(|e| SynthError::ContractViolation {
                stage,
                detail: e.to_string(),
                artifact: None,
            })?;
            let mut spec = CheckerSpec::new(traj.final_state.clone());
            spec.initial_state = Some(initial);
            spec.key_functions = derive_key_functions(&calls, &task.must_have_functions, &ctx.domain);
            for r in v.get("policy_focuses").and_then(Value::as_array).into_iter().flatten().filter_map(Value::as_str) {
                match r.parse::<crate::env::RuleId>() {
                    Ok(id) => spec.policy_focuses.push(id.as_str().to_string()),
                    Err(_) => log::debug!("{}: dropping unknown policy focus {r}", d.id),
                }
            }
            if let Some(o) = v.get("field_overrides").and_then(Value::as_object) {
                for (k, c) in o {
                    if let Ok(class) = serde_json::from_value::<FieldClass>(c.clone()) {
                        spec.field_overrides.insert(k.clone(), class);
                    }
                }
            }
            spec.validate(&ctx.domain)
                .map_err(|detail| SynthError::ContractViolation { stage, detail, artifact: None })?;
            Ok(Artifact::Checker(Box::new(spec)))
        }
    }
}

/// Result of validating a draft end to end.
#[derive(Clone, Debug, PartialEq)]
pub enum Validation {
    Pass,
    Fail(Vec<Issue>),
    Infeasible,
}

fn validate(ctx: &SynthContext, set: &PromptSet, d: &mut Draft) -> Result<Validation, SynthError> {
    let Some(raw) = &d.task_json else {
        return Ok(Validation::Fail(vec![Issue::new("schema_error", "no task artifact")]));
    };
    match task_from_json(&ctx.domain, &d.id, raw) {
        Ok(mut t) => {
            t.initial_state_seed = d.dialog_seed(ctx.config.seed);
            d.task = Some(t);
        }
        Err(detail) => return Ok(Validation::Fail(vec![Issue::new("schema_error", detail)])),
    }
    let Artifact::Verdict(verdict) = run_stage(ctx, set, Stage::TaskValidation, d)? else { unreachable!() };
    let feasible = verdict.is_feasible();
    if let Feasibility::Infeasible { category, .. } = &verdict {
        d.categories.insert(category.clone());
    }
    d.feasibility = Some(verdict);
    if !feasible {
        return Ok(Validation::Infeasible);
    }
    let Artifact::Dialogue(traj) = run_stage(ctx, set, Stage::DialogSynthesis, d)? else { unreachable!() };
    d.trajectory = Some(*traj);
    let Artifact::Validation(issues) = run_stage(ctx, set, Stage::TrajectoryValidation, d)? else { unreachable!() };
    Ok(if issues.is_empty() { Validation::Pass } else { Validation::Fail(issues) })
}

#[derive(Clone, Debug, PartialEq)]
pub enum Repair {
    Repaired { draft: Box<Draft>, repair_count: u32 },
    Discard { draft: Box<Draft>, rounds: u32 },
}

fn must_have_of(v: Option<&Value>) -> Vec<String> {
    v.and_then(|v| v.get("must_have_functions"))
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_str).map(str::to_string).collect())
        .unwrap_or_default()
}

/// Share of `original` still present in `edited`.
pub(crate) fn preserved_share(original: &[String], edited: &[String]) -> f64 {
    if original.is_empty() {
        return 1.0;
    }
    original.iter().filter(|f| edited.contains(f)).count() as f64 / original.len() as f64
}

/// Alternates Modify and re-validation for at most `max_repairs` rounds
/// (never more than three). An edit that keeps less than 80% of the
/// required functions is rejected and the round is spent.
pub fn repair_loop(ctx: &SynthContext, set: &PromptSet, mut d: Draft, issues: Vec<Issue>) -> Result<Repair, SynthError> {
    let cap = ctx.config.repair_cap().min(ctx.plan.max_repairs);
    let original = {
        let m = must_have_of(d.task_json.as_ref());
        if m.is_empty() { must_have_of(d.seed.as_ref()) } else { m }
    };
    let mut issues = issues;
    for round in 1..=cap {
        for i in &issues {
            d.categories.insert(i.category.clone());
        }
        let payload = json!({ "task": d.task_json, "issues": issues, "scenario_seed": d.seed, "round": round });
        let v = request_json(&ctx.backend, Stage::Modify, "Modify", set.prompt("Modify"), &payload)?;
        let Some(edited) = v.get("task").filter(|t| t.is_object()).cloned() else {
            issues = vec![Issue::new("schema_error", "Modify returned no task")];
            continue;
        };
        let share = preserved_share(&original, &must_have_of(Some(&edited)));
        if share < 0.8 {
            issues = vec![Issue::new("constraint_violation", format!("edit keeps {:.0}% of required functions", share * 100.0))];
            continue;
        }
        d.task_json = Some(edited);
        match validate(ctx, set, &mut d)? {
            Validation::Pass => return Ok(Repair::Repaired { draft: Box::new(d), repair_count: round }),
            Validation::Fail(next) => issues = next,
            Validation::Infeasible => return Ok(Repair::Discard { draft: Box::new(d), rounds: round }),
        }
    }
    for i in &issues {
        d.categories.insert(i.category.clone());
    }
    Ok(Repair::Discard { draft: Box::new(d), rounds: cap })
}

fn finish(d: Draft, status: InstanceStatus, repair_count: u32, checker: Option<CheckerSpec>) -> SynthesisInstance {
    let task = d.task.clone().unwrap_or_else(|| TaskSpec { id: d.id.clone(), ..TaskSpec::default() });
    SynthesisInstance {
        id: d.id,
        set_id: d.set_id,
        prompt_version: d.version,
        index: d.index,
        scenario_seed: d.seed.unwrap_or(Value::Null),
        task,
        feasibility: d.feasibility,
        trajectory: d.trajectory,
        checker_spec: checker,
        status,
        repair_count,
        categories: d.categories,
    }
}

/// One instance through the whole workflow. Rejections are values; only
/// backend failures and stage input errors surface as `Err`.
pub fn run_instance(ctx: &SynthContext, set: &PromptSet, index: usize) -> Result<SynthesisInstance, SynthError> {
    let mut d = Draft::new(set, index);
    match run_stage(ctx, set, Stage::RandomPool, &d) {
        Ok(Artifact::Seed(s)) => d.seed = Some(s),
        Ok(_) => unreachable!(),
        Err(SynthError::ContractViolation { .. }) => {
            d.categories.insert("schema_error".into());
            return Ok(finish(d, InstanceStatus::Discarded, 0, None));
        }
        Err(e) => return Err(e),
    }
    let mut pending = Vec::new();
    match run_stage(ctx, set, Stage::UserIntent, &d) {
        Ok(Artifact::Task(v)) => d.task_json = Some(v),
        Ok(_) => unreachable!(),
        Err(SynthError::ContractViolation { detail, artifact, .. }) => {
            d.task_json = artifact;
            pending.push(Issue::new("schema_error", detail));
        }
        Err(e) => return Err(e),
    }
    let (mut d, repairs) = if pending.is_empty() {
        match validate(ctx, set, &mut d)? {
            Validation::Pass => (d, 0),
            Validation::Infeasible => return Ok(finish(d, InstanceStatus::Infeasible, 0, None)),
            Validation::Fail(issues) => match repair_loop(ctx, set, d, issues)? {
                Repair::Repaired { draft, repair_count } => (*draft, repair_count),
                Repair::Discard { draft, rounds } => return Ok(discarded(*draft, rounds)),
            },
        }
    } else {
        match repair_loop(ctx, set, d, pending)? {
            Repair::Repaired { draft, repair_count } => (*draft, repair_count),
            Repair::Discard { draft, rounds } => return Ok(discarded(*draft, rounds)),
        }
    };
    let spec = match run_stage(ctx, set, Stage::ValidationFunction, &d) {
        Ok(Artifact::Checker(s)) => *s,
        Ok(_) => unreachable!(),
        Err(SynthError::ContractViolation { .. }) => {
            d.categories.insert("checker_error".into());
            return Ok(finish(d, InstanceStatus::Discarded, repairs, None));
        }
        Err(e) => return Err(e),
    };
    let traj = d.trajectory.as_mut().expect("validated drafts carry a dialogue");
    let reward = ctx.verifier().evaluate_submission(&spec, traj).reward;
    traj.reward = Some(f64::from(reward));
    if reward != 1 {
        d.categories.insert("checker_inconsistent".into());
        return Ok(finish(d, InstanceStatus::Discarded, repairs, Some(spec)));
    }
    Ok(finish(d, InstanceStatus::Accepted, repairs, Some(spec)))
}

fn discarded(d: Draft, rounds: u32) -> SynthesisInstance {
    let status = if d.feasibility.as_ref().is_some_and(|f| !f.is_feasible()) {
        InstanceStatus::Infeasible
    } else {
        InstanceStatus::Discarded
    };
    finish(d, status, rounds, None)
}

