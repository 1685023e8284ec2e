use super::GrpoError;
use crate::env::Role;
use crate::policy::ToyPolicyParams;
use crate::rollout::Group;
use serde::{Deserialize, Serialize};

/// Returns `(μ, σ, advantages)` with the population standard deviation.
pub fn group_advantages(rewards: &[f64]) -> Result<(f64, f64, Vec<f64>), GrpoError> {
    if rewards.is_empty() {
        return Err(GrpoError::EmptyBatch);
    }
    let n = rewards.len() as f64;
    let mu = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mu).powi(2)).sum::<f64>() / n;
    let sigma = var.sqrt();
    if sigma <= 1e-12 {
        return Err(GrpoError::ZeroVariance);
    }
    Ok((mu, sigma, rewards.iter().map(|r| (r - mu) / sigma).collect()))
}

/// A group with per-trajectory advantages attached.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvantagedGroup {
    pub group: Group,
    pub mu: f64,
    pub sigma: f64,
    pub advantages: Vec<f64>,
}

impl AdvantagedGroup {
    /// Degenerate groups carry zero advantage everywhere.
    pub fn new(group: Group) -> Self {
        match group_advantages(&group.rewards) {
            Ok((mu, sigma, advantages)) => AdvantagedGroup { group, mu, sigma, advantages },
            Err(_) => {
                let mu = group.rewards.first().copied().unwrap_or(0.0);
                let advantages = vec![0.0; group.rewards.len()];
                AdvantagedGroup { group, mu, sigma: 0.0, advantages }
            }
        }
    }
}

/// Keeps groups whose rewards are not all equal.
pub fn dynamic_filter(groups: Vec<Group>) -> Result<Vec<AdvantagedGroup>, GrpoError> {
    let kept: Vec<AdvantagedGroup> = groups
        .into_iter()
        .filter_map(|g| {
            let (mu, sigma, advantages) = group_advantages(&g.rewards).ok()?;
            Some(AdvantagedGroup { group: g, mu, sigma, advantages })
        })
        .collect();
    if kept.is_empty() {
        return Err(GrpoError::EmptyBatch);
    }
    Ok(kept)
}

/// `min(ρA, clip(ρ, 1−ε, 1+ε)A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub traj_id: String,
    pub turn: u64,
    pub pos: usize,
    pub context: u32,
    pub token: u32,
    pub new_logprob: f64,
    pub old_logprob: f64,
    pub advantage: f64,
}

/// Agent tokens of one group. `total_tokens` is the group normalizer ΣN.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenBatch {
    pub records: Vec<TokenRecord>,
    pub total_tokens: usize,
}

impl TokenBatch {
    /// Flattens the agent turns of a group. User and tool-result text is
    /// never a token of the batch.
    pub fn from_group(g: &AdvantagedGroup) -> Result<Self, GrpoError> {
        let mut records = Vec::new();
        let mut total = 0;
        for (traj, &adv) in g.group.trajectories.iter().zip(&g.advantages) {
            let traj_id = format!("{}#{}", traj.task_id, traj.seed);
            for turn in traj.turns.iter().filter(|t| t.actor == Role::Agent) {
                total += turn.token_count;
                let (Some(ids), Some(lps), Some(ctx)) = (&turn.token_ids, &turn.token_logprobs, &turn.token_contexts) else {
                    return Err(GrpoError::MissingLogprobs(traj_id));
                };
                for (pos, ((&token, &lp), &context)) in ids.iter().zip(lps).zip(ctx).enumerate() {
                    records.push(TokenRecord {
                        traj_id: traj_id.clone(),
                        turn: turn.turn,
                        pos,
                        context,
                        token,
                        new_logprob: lp,
                        old_logprob: lp,
                        advantage: adv,
                    });
                }
            }
        }
        Ok(TokenBatch { records, total_tokens: total })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// `(1/ΣN) Σ_tokens min(ρA, clip(ρ)A)` for one group.
pub fn batch_objective(batch: &TokenBatch, epsilon: f64) -> Result<f64, GrpoError> {
    if batch.records.is_empty() || batch.total_tokens == 0 {
        return Err(GrpoError::EmptyBatch);
    }
    let s: f64 = batch
        .records
        .iter()
        .map(|r| clipped_surrogate((r.new_logprob - r.old_logprob).exp(), r.advantage, epsilon))
        .sum();
    Ok(s / batch.total_tokens as f64)
}

/// Recomputes `new_logprob` under `params`, keeping the sampling-time values.
pub fn rescore(batch: &TokenBatch, params: &ToyPolicyParams) -> Result<TokenBatch, GrpoError> {
    let mut out = batch.clone();
    for r in &mut out.records {
        if r.token as usize >= params.vocab_size() {
            return Err(GrpoError::UnknownToken(r.token));
        }
        r.new_logprob = params.logprob(r.context, r.token as usize);
    }
    Ok(out)
}

/// Gradient of [`batch_objective`] w.r.t. the logit table, with `new`
/// log-probabilities taken from `params`. Where the clipped branch is
/// strictly smaller the term is constant and contributes nothing.
pub fn toy_policy_gradient(batch: &TokenBatch, params: &ToyPolicyParams, epsilon: f64) -> Result<Vec<f64>, GrpoError> {
    if batch.records.is_empty() || batch.total_tokens == 0 {
        return Err(GrpoError::EmptyBatch);
    }
    let v = params.vocab_size();
    let scale = 1.0 / batch.total_tokens as f64;
    let mut grad = vec![0.0; params.len()];
    for r in &batch.records {
        let y = r.token as usize;
        if y >= v {
            return Err(GrpoError::UnknownToken(r.token));
        }
        let ratio = (params.logprob(r.context, y) - r.old_logprob).exp();
        let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
        if ratio * r.advantage > clipped * r.advantage {
            continue;
        }
        let w = scale * ratio * r.advantage;
        let base = r.context as usize * v;
        for (j, p) in params.probs(r.context).iter().enumerate() {
            grad[base + j] += w * (if j == y { 1.0 } else { 0.0 } - p);
        }
    }
    Ok(grad)
}

/// Per-token training signal, one JSON object per line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalRecord {
    pub traj_id: String,
    pub turn: u64,
    pub pos: usize,
    pub old_logprob: f64,
    pub advantage: f64,
}

pub fn write_signals(batch: &TokenBatch) -> String {
    batch
        .records
        .iter()
        .map(|r| {
            let s = SignalRecord {
                traj_id: r.traj_id.clone(),
                turn: r.turn,
                pos: r.pos,
                old_logprob: r.old_logprob,
                advantage: r.advantage,
            };
            serde_json::to_string(&s).expect("signal serializes") + "\n"
        })
        .collect()
}
