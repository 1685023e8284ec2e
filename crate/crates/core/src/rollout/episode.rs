use super::{RolloutConfig, RolloutError};
use crate::env::{
    Action, Domain, EnvState, JointAction, Role, TaskSpec, Termination, ToolCall, ToolResult,
};
use crate::policy::{ParsedAction, Payload, Policy, PolicyError, PolicyOutput};
use crate::util::mix_seed;
use crate::verifier::Verifier;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// One policy invocation and its effect.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn: u64,
    pub actor: Role,
    pub parsed: ParsedAction,
    pub raw_text: String,
    pub token_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_ids: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_contexts: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_result: Option<ToolResult>,
}

impl TurnRecord {
    fn new(turn: u64, actor: Role, out: PolicyOutput) -> Self {
        let token_count = match &out.token_ids {
            Some(ids) => ids.len(),
            None => out.raw_text.split_whitespace().count(),
        };
        TurnRecord {
            turn,
            actor,
            parsed: out.parsed,
            raw_text: out.raw_text,
            token_count,
            token_ids: out.token_ids,
            token_logprobs: out.token_logprobs,
            token_contexts: out.token_contexts,
            tool_result: None,
        }
    }

    pub fn is_tool_call(&self) -> bool {
        self.parsed.is_function()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub seed: u64,
    pub turns: Vec<TurnRecord>,
    pub termination: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub final_state: EnvState,
}

impl Trajectory {
    /// Tokens authored by the agent policy (N for this trajectory).
    pub fn agent_tokens(&self) -> usize {
        self.turns.iter().filter(|t| t.actor == Role::Agent).map(|t| t.token_count).sum()
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trajectory serializes")
    }
}

fn to_action(actor: Role, parsed: &ParsedAction, raw: &str) -> Action {
    let message = |text: String| match actor {
        Role::Agent => Action::AgentMessage(text),
        Role::User => Action::UserMessage(text),
    };
    match &parsed.payload {
        Payload::Function { name, arguments } => Action::ToolCall(ToolCall { name: name.clone(), arguments: arguments.clone(), caller: actor }),
        Payload::Message { text } | Payload::Answer { text } => message(text.clone()),
        Payload::Signal { signal, .. } => Action::ControlSignal(*signal),
        Payload::Malformed { .. } => message(raw.to_string()),
    }
}

fn invoke(policy: &mut dyn Policy, obs: &crate::env::Observation, seed: u64, retries: u32) -> Result<PolicyOutput, PolicyError> {
    let mut attempt = 0;
    loop {
        match policy.next_action(obs, seed) {
            Err(PolicyError::RemoteUnavailable(e)) if attempt < retries => {
                log::warn!("policy {} unavailable ({e}); retrying", policy.id());
                attempt += 1;
            }
            other => return other,
        }
    }
}

/// Runs one episode to termination. Never fails: reset, policy and
/// environment errors end the episode with [`Termination::Error`].
pub fn run_episode(
    domain: &Domain,
    task: &TaskSpec,
    agent: &mut dyn Policy,
    user: &mut dyn Policy,
    cfg: &RolloutConfig,
    seed: u64,
) -> Trajectory {
    let mut turns = Vec::new();
    let finish = |mut state: EnvState, turns, reason, error: Option<String>| {
        state.terminate(reason);
        Trajectory {
            task_id: task.id.clone(),
            seed,
            turns,
            termination: state.termination().unwrap_or(reason),
            reward: None,
            error,
            final_state: state,
        }
    };
    let mut state = match domain.reset(task, seed) {
        Ok(s) => s,
        Err(e) => return finish(domain.base_state(seed), turns, Termination::Error, Some(e.to_string())),
    };
    let mut actor = Role::User;
    while state.turn() < cfg.max_turns.max(1) {
        let obs = domain.observe(&state, actor);
        let policy: &mut dyn Policy = match actor {
            Role::Agent => &mut *agent,
            Role::User => &mut *user,
        };
        let out = match invoke(policy, &obs, mix_seed(seed, state.turn()), cfg.retry_count) {
            Ok(o) => o,
            Err(e) => return finish(state, turns, Termination::Error, Some(e.to_string())),
        };
        let mut record = TurnRecord::new(state.turn(), actor, out);
        let action = to_action(actor, &record.parsed, &record.raw_text);
        let chained = matches!(action, Action::ToolCall(_));
        match domain.step(&state, &JointAction::single(actor, action)) {
            Ok(tr) => {
                record.tool_result = tr.tool_result;
                state = tr.state;
                turns.push(record);
            }
            Err(e) => {
                turns.push(record);
                return finish(state, turns, Termination::Error, Some(e.to_string()));
            }
        }
        if state.is_terminal() {
            let reason = state.termination().unwrap_or(Termination::Error);
            return finish(state, turns, reason, None);
        }
        if !chained {
            actor = actor.other();
        }
    }
    finish(state, turns, Termination::MaxTurns, None)
}

/// G trajectories of one task plus their binary rewards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub task_id: String,
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<f64>,
}

/// Builds a fresh policy for the episode with the given seed.
pub type PolicyFactory<'a> = dyn Fn(u64) -> Box<dyn Policy> + Sync + 'a;

/// Samples `cfg.group_size` episodes with seeds `base_seed..base_seed+G`,
/// in parallel on the current rayon pool, and scores them.
pub fn sample_group(
    domain: &Domain,
    task: &TaskSpec,
    agent: &PolicyFactory,
    user: &PolicyFactory,
    verifier: &Verifier,
    cfg: &RolloutConfig,
    base_seed: u64,
) -> Result<Group, RolloutError> {
    cfg.validate()?;
    let trajectories: Vec<Trajectory> = (0..cfg.group_size as u64)
        .into_par_iter()
        .map(|g| {
            let seed = base_seed.wrapping_add(g);
            let (mut a, mut u) = (agent(seed), user(seed));
            let mut t = run_episode(domain, task, a.as_mut(), u.as_mut(), cfg, seed);
            t.reward = Some(verifier.reward(task, &t));
            t
        })
        .collect();
    let rewards = trajectories.iter().map(|t| t.reward.unwrap_or(0.0)).collect();
    Ok(Group { task_id: task.id.clone(), trajectories, rewards })
}
