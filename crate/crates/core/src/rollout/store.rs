use super::{RolloutError, Trajectory};
use crate::env::TaskSpec;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

/// Append-only JSONL sink, safe to share between worker threads.
pub struct TrajectoryWriter {
    out: Mutex<BufWriter<File>>,
}

impl TrajectoryWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self, RolloutError> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(TrajectoryWriter { out: Mutex::new(BufWriter::new(f)) })
    }

    pub fn append(&self, t: &Trajectory) -> Result<(), RolloutError> {
        let mut w = self.out.lock().unwrap_or_else(|e| e.into_inner());
        writeln!(w, "{}", t.to_json_line())?;
        Ok(())
    }

    pub fn flush(&self) -> Result<(), RolloutError> {
        self.out.lock().unwrap_or_else(|e| e.into_inner()).flush()?;
        Ok(())
    }
}

impl Drop for TrajectoryWriter {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

pub fn read_trajectories(path: impl AsRef<Path>) -> Result<Vec<Trajectory>, RolloutError> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Every `*.json` file in `dir`, sorted by file name. A task without an id
/// takes its file stem.
pub fn read_tasks(dir: impl AsRef<Path>) -> Result<Vec<TaskSpec>, RolloutError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let mut task: TaskSpec = serde_json::from_str(&std::fs::read_to_string(&p)?)?;
        if task.id.is_empty() {
            task.id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        }
        out.push(task);
    }
    Ok(out)
}
