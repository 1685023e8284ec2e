//! Episode driver, group sampler, trajectory store and SFT export.

mod episode;
mod sft;
mod store;

pub use episode::{run_episode, sample_group, Group, PolicyFactory, TurnRecord, Trajectory};
pub use sft::{export_sft, read_sft, write_sft, SftFormat, SftRecord};
pub use store::{read_tasks, read_trajectories, TrajectoryWriter};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum RolloutError {
    #[error("invalid rollout config: {0}")]
    InvalidConfig(String),
    #[error("no turns qualify for export")]
    EmptySelection,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    pub max_turns: u64,
    /// Trajectories per task (G).
    pub group_size: usize,
    pub prompts_per_batch: usize,
    pub worker_cap: usize,
    /// Extra attempts for a policy call that fails with a transport error.
    pub retry_count: u32,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig { max_turns: 40, group_size: 64, prompts_per_batch: 8, worker_cap: 8, retry_count: 2 }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<(), RolloutError> {
        let bad = |m: &str| Err(RolloutError::InvalidConfig(m.to_string()));
        if self.max_turns < 1 {
            return bad("max_turns must be at least 1");
        }
        if self.group_size < 2 {
            return bad("group_size must be at least 2");
        }
        if self.prompts_per_batch < 1 {
            return bad("prompts_per_batch must be at least 1");
        }
        if self.worker_cap < 1 {
            return bad("worker_cap must be at least 1");
        }
        Ok(())
    }

    /// Episodes per training batch (prompts × trajectories).
    pub fn batch_episodes(&self) -> usize {
        self.prompts_per_batch * self.group_size
    }

    /// Runs `f` on a pool bounded by `worker_cap`.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        match rayon::ThreadPoolBuilder::new().num_threads(self.worker_cap).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
}
