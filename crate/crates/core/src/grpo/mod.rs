//! Group-relative training signals.
//!
//! Rewards are standardized within each task group, degenerate groups are
//! filtered out, and the clipped surrogate is averaged over every agent
//! token of the group (`1/ΣN`). [`train_toy`] closes the loop on the toy
//! refund desk with the tabular [`ToyPolicy`](crate::policy::ToyPolicy).

mod signal;
mod train;

pub use signal::{
    batch_objective, clipped_surrogate, dynamic_filter, group_advantages, rescore, toy_policy_gradient, write_signals,
    AdvantagedGroup, SignalRecord, TokenBatch, TokenRecord,
};
pub use train::{toy_binding, toy_task, toy_user_script, train_toy, CurvePoint, TrainReport};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GrpoError {
    #[error("group rewards have zero variance")]
    ZeroVariance,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("invalid grpo config: {0}")]
    InvalidConfig(String),
    #[error("unknown token id {0}")]
    UnknownToken(u32),
    #[error("trajectory {0} has agent turns without token log-probabilities")]
    MissingLogprobs(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    /// Clip half-width ε.
    pub epsilon: f64,
    pub group_size: usize,
    pub prompts_per_batch: usize,
    pub dynamic_filter: bool,
    pub learning_rate: f64,
    pub iterations: usize,
    /// Optimizer passes per sampled batch.
    pub epochs: usize,
    pub max_turns: u64,
    pub seed: u64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            epsilon: 0.2,
            group_size: 8,
            prompts_per_batch: 8,
            dynamic_filter: true,
            learning_rate: 8.0,
            iterations: 300,
            epochs: 1,
            max_turns: 10,
            seed: 0,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        let bad = |m: &str| Err(GrpoError::InvalidConfig(m.into()));
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon must lie in (0, 1)");
        }
        if self.group_size < 2 {
            return bad("group_size must be at least 2");
        }
        if self.prompts_per_batch == 0 || self.epochs == 0 || self.max_turns == 0 {
            return bad("prompts_per_batch, epochs and max_turns must be positive");
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return bad("learning_rate must be finite and non-negative");
        }
        Ok(())
    }
}
