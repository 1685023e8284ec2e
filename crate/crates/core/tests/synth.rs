use serde_json::{json, Value};
use std::sync::{Arc, Mutex};
use tooltrain::env::Domain;
use tooltrain::policy::{ChatBackend, ChatMessage, ClientError};
use tooltrain::synth::{
    default_prompts, evolve, generate_prompt_set, judge, plan_workflow, run_instance, run_pilot, run_scale, run_synthesis,
    write_archive, Backend, Critique, InstanceStatus, MockBackend, MockKnobs, Stage, SynthConfig, SynthContext, SynthError,
    WorkflowPlan, MAX_EVOLUTIONS, WORKERS,
};
use tooltrain::verifier::Verifier;

type Override = Box<dyn Fn(&str, &Value) -> Option<String> + Send + Sync>;

/// Delegates to the mock, logs `(worker, user payload)`, and lets a test
/// replace the reply of chosen workers.
struct Recorder {
    inner: MockBackend,
    log: Mutex<Vec<(String, String)>>,
    replace: Override,
}

impl Recorder {
    fn new(d: &Domain, knobs: MockKnobs, replace: Override) -> Arc<Self> {
        Arc::new(Recorder { inner: MockBackend::with_knobs(d, knobs), log: Mutex::new(vec![]), replace })
    }

    fn plain(d: &Domain) -> Arc<Self> {
        Self::new(d, MockKnobs::default(), Box::new(|_, _| None))
    }

    fn calls(&self, worker: &str) -> Vec<Value> {
        self.log.lock().unwrap().iter().filter(|(w, _)| w == worker).map(|(_, p)| serde_json::from_str(p).unwrap()).collect()
    }
}

impl ChatBackend for Recorder {
    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<String, ClientError> {
        let head = messages[0].content.lines().next().unwrap_or_default();
        let worker = head.strip_prefix("Worker: ").unwrap_or_default().to_string();
        let payload = messages.last().map(|m| m.content.clone()).unwrap_or_default();
        if worker != "Trajectory" && worker != "UserSimulator" {
            self.log.lock().unwrap().push((worker.clone(), payload.clone()));
            if let Some(out) = serde_json::from_str(&payload).ok().and_then(|p| (self.replace)(&worker, &p)) {
                return Ok(out);
            }
        }
        self.inner.complete(messages, temperature)
    }
}

fn ctx_with(d: &Domain, b: Backend, cfg: SynthConfig) -> SynthContext {
    SynthContext::new(d, b, WorkflowPlan::canonical(), cfg)
}

fn mock(d: &Domain) -> Backend {
    Arc::new(MockBackend::new(d))
}

fn set0(b: &Backend) -> tooltrain::synth::PromptSet {
    generate_prompt_set(b, &WorkflowPlan::canonical(), &[], 0).unwrap()
}

#[test]
fn planner_yields_canonical_chain() {
    let d = Domain::airline();
    let plan = plan_workflow(&mock(&d), "tasks", &d, &json!({})).unwrap();
    assert_eq!(plan, WorkflowPlan::canonical());
    assert_eq!(plan.stages, Stage::CANONICAL);
    assert_eq!((plan.max_repairs, plan.max_evolutions), (3, 16));
    for s in Stage::CANONICAL {
        assert!(!plan.bindings[&s].is_empty());
    }
}

#[test]
fn invalid_plans_are_rejected() {
    let c = Stage::CANONICAL.to_vec();
    let mut dup = c.clone();
    dup[1] = dup[0];
    assert!(matches!(WorkflowPlan::from_stages(dup), Err(SynthError::InvalidPlan(_))));
    assert!(matches!(WorkflowPlan::from_stages(c[..6].to_vec()), Err(SynthError::InvalidPlan(_))));
    let mut last = c.clone();
    last.swap(5, 6);
    assert!(matches!(WorkflowPlan::from_stages(last), Err(SynthError::InvalidPlan(_))));

    let d = Domain::airline();
    let bad: Backend = Recorder::new(&d, MockKnobs::default(), Box::new(|w, _| (w == "Planner").then(|| r#"{"stages":["RandomPool","Dream"]}"#.into())));
    assert!(matches!(plan_workflow(&bad, "x", &d, &json!({})), Err(SynthError::InvalidPlan(_))));
    let prose: Backend = Recorder::new(&d, MockKnobs::default(), Box::new(|w, _| (w == "Planner").then(|| "use the usual order".into())));
    assert!(matches!(plan_workflow(&prose, "x", &d, &json!({})), Err(SynthError::InvalidPlan(_))));
}

#[test]
fn permuted_plan_gives_same_instances() {
    let d = Domain::airline();
    let mut stages = Stage::CANONICAL.to_vec();
    stages.swap(0, 1);
    let plan = WorkflowPlan::from_stages(stages).unwrap();
    let b = mock(&d);
    let s = set0(&b);
    let a = SynthContext::new(&d, b.clone(), plan, SynthConfig::default());
    let c = ctx_with(&d, b.clone(), SynthConfig::default());
    for i in [1, 2, 4] {
        assert_eq!(run_instance(&a, &s, i).unwrap(), run_instance(&c, &s, i).unwrap());
    }
}

#[test]
fn first_prompt_set_is_shipped_prompts() {
    let d = Domain::airline();
    let r = Recorder::plain(&d);
    let b: Backend = r.clone();
    let s = set0(&b);
    assert_eq!(s.prompts, default_prompts());
    assert_eq!((s.version, s.set_id), (1, 0));
    assert!(s.lineage_is_valid());
    assert!(r.calls("PromptEngineer").is_empty());
    for w in WORKERS {
        assert!(!s.prompt(w).trim().is_empty(), "{w}");
    }
}

#[test]
fn later_sets_see_prior_summaries() {
    let d = Domain::airline();
    let r = Recorder::plain(&d);
    let b: Backend = r.clone();
    let plan = WorkflowPlan::canonical();
    let prior = vec!["alpha".to_string(), "beta".into(), "gamma".into()];
    let s = generate_prompt_set(&b, &plan, &prior, 3).unwrap();
    assert_eq!(s.set_id, 3);
    assert_ne!(s.prompts, default_prompts());
    let calls = r.calls("PromptEngineer");
    assert_eq!(calls.len(), 1);
    assert_eq!(calls[0]["prior_summaries"], json!(prior));
    assert!(!prior.contains(&s.summary));
    assert!(matches!(generate_prompt_set(&b, &plan, &prior[..2], 3), Err(SynthError::Precondition(_))));
}

#[test]
fn ghost_user_is_infeasible_missing_resource() {
    let d = Domain::airline();
    let b = mock(&d);
    let ctx = ctx_with(&d, b.clone(), SynthConfig::default());
    let inst = run_instance(&ctx, &set0(&b), 0).unwrap();
    assert_eq!(inst.status, InstanceStatus::Infeasible);
    assert!(inst.categories.contains("missing_resource"));
    assert!(!inst.feasibility.unwrap().is_feasible());
    assert!(inst.checker_spec.is_none());
}

#[test]
fn accepted_checker_references_own_final_state() {
    let d = Domain::airline();
    let b = mock(&d);
    let ctx = ctx_with(&d, b.clone(), SynthConfig::default());
    let s = set0(&b);
    let v = Verifier::new(&d);
    let mut seen = 0;
    for i in [1, 2, 4, 5, 7, 8] {
        let inst = run_instance(&ctx, &s, i).unwrap();
        assert_eq!(inst.status, InstanceStatus::Accepted, "{}", inst.id);
        let spec = inst.checker_spec.as_ref().unwrap();
        let traj = inst.trajectory.as_ref().unwrap();
        assert_eq!(spec.reference_final_state, traj.final_state);
        assert_eq!(v.evaluate_submission(spec, traj).reward, 1);
        assert_eq!(v.reward(&inst.task_with_checker(), traj), 1.0);
        seen += 1;
    }
    assert_eq!(seen, 6);
}

#[test]
fn incomplete_info_needs_one_repair() {
    let d = Domain::airline();
    let b = mock(&d);
    let ctx = ctx_with(&d, b.clone(), SynthConfig::default());
    let inst = run_instance(&ctx, &set0(&b), 10).unwrap();
    assert_eq!(inst.status, InstanceStatus::Accepted);
    assert_eq!(inst.repair_count, 1);
    assert!(inst.categories.contains("incomplete_known_info"));
}

#[test]
fn unfixable_instance_discarded_after_three_rounds() {
    let d = Domain::airline();
    let knobs = MockKnobs { schema_errors_after: Some(0), ..MockKnobs::default() };
    let r = Recorder::new(&d, knobs, Box::new(|w, p| (w == "Modify").then(|| json!({ "task": p["task"] }).to_string())));
    let b: Backend = r.clone();
    let ctx = ctx_with(&d, b.clone(), SynthConfig::default());
    let inst = run_instance(&ctx, &set0(&b), 1).unwrap();
    assert_eq!(inst.status, InstanceStatus::Discarded);
    assert_eq!(inst.repair_count, 3);
    assert!(inst.categories.contains("schema_error"));
    assert_eq!(r.calls("Modify").len(), 3);

    let low = SynthConfig { max_repairs: 1, ..SynthConfig::default() };
    let r2 = Recorder::new(&d, knobs_schema(), Box::new(|w, p| (w == "Modify").then(|| json!({ "task": p["task"] }).to_string())));
    let b2: Backend = r2.clone();
    run_instance(&ctx_with(&d, b2.clone(), low), &set0(&b2), 1).unwrap();
    assert_eq!(r2.calls("Modify").len(), 1);
    let high = SynthConfig { max_repairs: 9, ..SynthConfig::default() };
    assert_eq!(high.repair_cap(), 3);
}

fn knobs_schema() -> MockKnobs {
    MockKnobs { schema_errors_after: Some(0), ..MockKnobs::default() }
}

#[test]
fn edits_dropping_required_calls_are_rejected() {
    let d = Domain::airline();
    let drop_all = |w: &str, p: &Value| {
        (w == "Modify").then(|| {
            let mut t = p["scenario_seed"].clone();
            t["must_have_functions"] = json!([]);
            json!({ "task": t }).to_string()
        })
    };
    let r = Recorder::new(&d, knobs_schema(), Box::new(drop_all));
    let b: Backend = r.clone();
    let inst = run_instance(&ctx_with(&d, b.clone(), SynthConfig::default()), &set0(&b), 1).unwrap();
    assert_eq!(inst.status, InstanceStatus::Discarded);
    assert!(inst.categories.contains("constraint_violation"));

    let keep = SynthConfig::default();
    let b = mock(&d);
    let fine = run_instance(&ctx_with(&d, Arc::new(MockBackend::with_knobs(&d, knobs_schema())), keep), &set0(&b), 1).unwrap();
    assert_eq!(fine.status, InstanceStatus::Accepted);
    assert_eq!(fine.repair_count, 1);
}

fn critique(id: &str, category: &str) -> Critique {
    serde_json::from_value(json!({
        "id": id, "target": "t",
        "scores": { "executability": 0.5, "tool_correctness": 1.0, "trajectory_coherence": 0.5, "difficulty_coverage": 1.0 },
        "findings": [{ "category": category, "description": "d", "evidence": "set0-00000" }],
    }))
    .unwrap()
}

#[test]
fn evolve_versions_and_lineage() {
    let d = Domain::airline();
    let b = mock(&d);
    let s = set0(&b);
    let v2 = evolve(&b, &s, &[critique("c1", "missing_resource")]).unwrap();
    assert_eq!(v2.version, 2);
    assert!(v2.lineage_is_valid());
    assert_eq!(v2.lineage[1].critique_ids, ["c1"]);
    assert!(v2.prompt("UserIntent").contains("Constraint (missing_resource)"));
    assert!(matches!(evolve(&b, &s, &[]), Err(SynthError::Precondition(_))));

    let mut cur = s;
    for i in 0..MAX_EVOLUTIONS {
        cur = evolve(&b, &cur, &[critique(&format!("c{i}"), "schema_error")]).unwrap();
    }
    assert_eq!(cur.version, 17);
    assert!(cur.lineage_is_valid());
    assert_eq!(cur.prompt("UserIntent").matches("Constraint (schema_error)").count(), 1);
}

#[test]
fn judge_scores_and_fallback() {
    let d = Domain::airline();
    let b = mock(&d);
    let ctx = ctx_with(&d, b.clone(), SynthConfig::default());
    let s = set0(&b);
    let batch: Vec<_> = (0..6).map(|i| run_instance(&ctx, &s, i).unwrap()).collect();
    let c = judge(&b, "probe", &batch).unwrap();
    assert!(c.scores.in_range());
    assert!(c.findings.iter().any(|f| f.category == "missing_resource"));
    assert!(c.findings.iter().all(|f| !f.evidence.is_empty()));

    let r = Recorder::new(&d, MockKnobs { unresponsive_judge: true, ..MockKnobs::default() }, Box::new(|_, _| None));
    let rb: Backend = r.clone();
    let c = judge(&rb, "probe", &batch).unwrap();
    assert_eq!(c.quality(), 0.0);
    assert_eq!(r.calls("Judge").len(), 2);
}

#[test]
fn pilot_batch_bounds() {
    let d = Domain::airline();
    let b = mock(&d);
    let ctx = ctx_with(&d, b.clone(), SynthConfig::default());
    for bad in [4, 21] {
        assert!(matches!(run_pilot(&ctx, set0(&b), bad, 0), Err(SynthError::Precondition(_))));
        assert!(SynthConfig { pilot_batch: bad, ..SynthConfig::default() }.validate().is_err());
    }
    assert!(SynthConfig { audit_rate: 1.5, ..SynthConfig::default() }.validate().is_err());
}

#[test]
fn pilot_converges_on_third_version() {
    let d = Domain::airline();
    let b = mock(&d);
    let ctx = ctx_with(&d, b.clone(), SynthConfig::default());
    let p = run_pilot(&ctx, set0(&b), 10, 0).unwrap();
    assert!(p.converged);
    assert_eq!(p.history.len(), 3);
    assert_eq!(p.set.version, 3);
    assert!(p.history.last().unwrap().converged);
    assert!(p.history[..2].iter().all(|m| !m.converged));
    assert!(p.categories_seen.contains("missing_resource"));
}

#[test]
fn stubborn_backend_exhausts_pilot() {
    let d = Domain::airline();
    let b: Backend = Arc::new(MockBackend::with_knobs(&d, MockKnobs { ignore_constraints: true, fail_until_version: 99, ..MockKnobs::default() }));
    let ctx = ctx_with(&d, b.clone(), SynthConfig::default());
    let p = run_pilot(&ctx, set0(&b), 10, 0).unwrap();
    assert!(!p.converged);
    assert_eq!(p.history.len(), 16);
    assert_eq!(p.set.version, 17);
    assert!(p.set.lineage_is_valid());
    let cfg = SynthConfig { prompt_sets: 1, ..SynthConfig::default() };
    assert!(matches!(run_synthesis(&d, b, &cfg), Err(SynthError::NoConvergedSets)));
}

#[test]
fn scale_refuses_unconverged_sets() {
    let d = Domain::airline();
    let b = mock(&d);
    let ctx = ctx_with(&d, b.clone(), SynthConfig::default());
    assert!(matches!(run_scale(&ctx, vec![], 5, 0.25), Err(SynthError::NoConvergedSets)));
    let mut p = run_pilot(&ctx, set0(&b), 10, 0).unwrap();
    p.converged = false;
    assert!(matches!(run_scale(&ctx, vec![p], 5, 0.25), Err(SynthError::Precondition(_))));
}

#[test]
fn new_error_category_pauses_generation() {
    let d = Domain::airline();
    let b: Backend = Arc::new(MockBackend::with_knobs(&d, knobs_after(50)));
    let cfg = SynthConfig { prompt_sets: 1, n_target: 60, audit_rate: 1.0, ..SynthConfig::default() };
    let run = run_synthesis(&d, b, &cfg).unwrap();
    let pauses = &run.scale.pauses;
    assert_eq!(pauses.len(), 1);
    assert_eq!(pauses[0].at_index, 50);
    assert!(pauses[0].reason.contains("schema_error"));
    assert!(pauses[0].resumed_version > run.pilots[0].set.version);
    assert_eq!(run.scale.instances.len(), 60);
    assert!(run.scale.audit_log.iter().any(|r| r.drift.is_some()));
    assert!(run.scale.sets[0].lineage_is_valid());
}

fn knobs_after(n: usize) -> MockKnobs {
    MockKnobs { schema_errors_after: Some(n), ..MockKnobs::default() }
}

#[test]
fn zero_audit_rate_never_pauses() {
    let d = Domain::airline();
    let b: Backend = Arc::new(MockBackend::with_knobs(&d, knobs_after(50)));
    let cfg = SynthConfig { prompt_sets: 1, n_target: 60, audit_rate: 0.0, ..SynthConfig::default() };
    let run = run_synthesis(&d, b, &cfg).unwrap();
    assert!(run.scale.pauses.is_empty());
    assert!(run.scale.audit_log.is_empty());
    assert_eq!(run.scale.instances.len(), 60);
}

#[test]
fn full_run_closes() {
    let d = Domain::airline();
    let cfg = SynthConfig::default();
    let run = run_synthesis(&d, mock(&d), &cfg).unwrap();
    assert_eq!(run.initial_sets.len(), 4);
    assert_eq!(run.scale.instances.len(), cfg.n_target);
    assert!(run.pilots.iter().all(|p| p.converged && p.history.len() <= 16));
    let v = Verifier::new(&d);
    for inst in &run.scale.instances {
        assert!(inst.is_accepted());
        assert!(inst.repair_count <= 3);
        assert_eq!(inst.trajectory.as_ref().unwrap().reward, Some(1.0));
        assert_eq!(v.evaluate_submission(inst.checker_spec.as_ref().unwrap(), inst.trajectory.as_ref().unwrap()).reward, 1);
    }
    let ids: std::collections::BTreeSet<_> = run.scale.instances.iter().map(|i| &i.id).collect();
    assert_eq!(ids.len(), cfg.n_target);
    assert!(run.scale.sets.iter().all(|s| s.lineage_is_valid()));

    let (x, y) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let m = write_archive(x.path(), &run).unwrap();
    write_archive(y.path(), &run_synthesis(&d, mock(&d), &cfg).unwrap()).unwrap();
    assert_eq!(m.accepted, 50);
    assert_eq!(tooltrain::rollout::read_tasks(x.path().join("tasks")).unwrap().len(), 50);
    for f in ["manifest.json", "trajectories.jsonl", "audit.jsonl", "pilots.json"] {
        assert_eq!(std::fs::read(x.path().join(f)).unwrap(), std::fs::read(y.path().join(f)).unwrap(), "{f}");
    }
}
