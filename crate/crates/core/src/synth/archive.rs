use super::{LineageEntry, SynthError, SynthesisRun};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetManifest {
    pub set_id: usize,
    pub summary: String,
    pub final_version: u32,
    pub lineage: Vec<LineageEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub n_target: usize,
    pub accepted: usize,
    pub discarded: usize,
    pub attempts: usize,
    pub pauses: usize,
    pub instances: Vec<String>,
    pub prompt_sets: Vec<SetManifest>,
}

/// Writes the dataset directory:
///
/// ```text
/// manifest.json
/// instances/<id>.json     task, seed, status, repair count
/// checkers/<id>.json      checker spec
/// tasks/<id>.json         task with its checker attached, ready for `eval`
/// trajectories.jsonl      one dialogue per accepted instance
/// audit.jsonl
/// pilots.json
/// ```
///
/// Output depends only on the run, so equal runs give equal bytes.
pub fn write_archive(dir: impl AsRef<Path>, run: &SynthesisRun) -> Result<Manifest, SynthError> {
    let dir = dir.as_ref();
    for sub in ["instances", "checkers", "tasks"] {
        if dir.join(sub).is_dir() {
            fs::remove_dir_all(dir.join(sub))?;
        }
    }
    fs::create_dir_all(dir.join("instances"))?;
    fs::create_dir_all(dir.join("checkers"))?;
    fs::create_dir_all(dir.join("tasks"))?;
    let mut trajectories = String::new();
    for inst in &run.scale.instances {
        fs::write(dir.join("tasks").join(format!("{}.json", inst.id)), pretty(&inst.task_with_checker()))?;
        let mut bare = inst.clone();
        let traj = bare.trajectory.take();
        let checker = bare.checker_spec.take();
        fs::write(dir.join("instances").join(format!("{}.json", inst.id)), pretty(&bare))?;
        if let Some(c) = checker {
            fs::write(dir.join("checkers").join(format!("{}.json", inst.id)), pretty(&c))?;
        }
        if let Some(t) = traj {
            trajectories.push_str(&t.to_json_line());
            trajectories.push('\n');
        }
    }
    fs::write(dir.join("trajectories.jsonl"), trajectories)?;
    let audit: String = run
        .scale
        .audit_log
        .iter()
        .map(|r| serde_json::to_string(r).expect("audit record serializes") + "\n")
        .collect();
    fs::write(dir.join("audit.jsonl"), audit)?;
    fs::write(dir.join("pilots.json"), pretty(&run.pilots))?;
    let manifest = Manifest {
        seed: run.config.seed,
        n_target: run.config.n_target,
        accepted: run.scale.instances.len(),
        discarded: run.scale.discarded,
        attempts: run.scale.attempts,
        pauses: run.scale.pauses.len(),
        instances: run.scale.instances.iter().map(|i| i.id.clone()).collect(),
        prompt_sets: run
            .scale
            .sets
            .iter()
            .map(|s| SetManifest { set_id: s.set_id, summary: s.summary.clone(), final_version: s.version, lineage: s.lineage.clone() })
            .collect(),
    };
    fs::write(dir.join("manifest.json"), pretty(&manifest))?;
    Ok(manifest)
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("archive value serializes") + "\n"
}
