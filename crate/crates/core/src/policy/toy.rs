use super::{check_role, render, ParsedAction, Policy, PolicyError, PolicyOutput};
use crate::env::{Domain, HistoryEntry, Observation, Role};
use crate::util::fnv1a;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::sync::Arc;

pub const TOY_FEATURES: usize = 1024;
pub const TOY_MAX_TOKENS: usize = 3;
const TURN_CAP: u64 = 15;
pub const SAY: &str = "<say>";
pub const EOS: &str = "<eos>";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ToyToken {
    Tool(String),
    Say,
    Eos,
}

/// Tabular softmax policy: one logit row per hashed context feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicyParams {
    pub vocab: Vec<String>,
    pub features: usize,
    pub logits: Vec<f64>,
}

impl ToyPolicyParams {
    /// Zero logits over `tools` plus the say and terminator tokens.
    pub fn new(tools: impl IntoIterator<Item = String>) -> Self {
        let mut vocab: Vec<String> = tools.into_iter().collect();
        vocab.push(SAY.into());
        vocab.push(EOS.into());
        let logits = vec![0.0; TOY_FEATURES * vocab.len()];
        ToyPolicyParams { vocab, features: TOY_FEATURES, logits }
    }

    pub fn for_domain(domain: &Domain) -> Self {
        let tools = domain.tools().iter().filter(|t| domain.can_call(Role::Agent, t)).map(|t| t.name.clone());
        Self::new(tools)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.vocab.iter().position(|t| t == token)
    }

    pub fn token(&self, idx: usize) -> ToyToken {
        match self.vocab[idx].as_str() {
            SAY => ToyToken::Say,
            EOS => ToyToken::Eos,
            t => ToyToken::Tool(t.to_string()),
        }
    }

    pub fn row(&self, feature: u32) -> &[f64] {
        let v = self.vocab.len();
        let f = feature as usize;
        &self.logits[f * v..(f + 1) * v]
    }

    pub fn probs(&self, feature: u32) -> Vec<f64> {
        softmax(self.row(feature))
    }

    pub fn logprob(&self, feature: u32, idx: usize) -> f64 {
        let row = self.row(feature);
        row[idx] - log_sum_exp(row)
    }

    pub fn is_finite(&self) -> bool {
        self.logits.iter().all(|x| x.is_finite())
    }

    /// `θ ← θ + lr · grad` (ascent).
    pub fn ascend(&mut self, grad: &[f64], lr: f64) {
        for (t, g) in self.logits.iter_mut().zip(grad) {
            *t += lr * g;
        }
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Observation part of the context: (last tool status, last speaker, turn).
fn obs_key(obs: &Observation) -> [u8; 3] {
    let (status, speaker) = match obs.history.last() {
        None => (0, 2),
        Some(HistoryEntry::ToolResult { ok, caller, .. }) => (if *ok { 1 } else { 2 }, *caller as u8),
        Some(HistoryEntry::ToolCall { caller, .. }) => (0, *caller as u8),
        Some(HistoryEntry::Message { role, .. }) | Some(HistoryEntry::Signal { role, .. }) => (0, *role as u8),
    };
    [status, speaker, obs.turn.min(TURN_CAP) as u8]
}

fn feature(key: [u8; 3], prev: Option<usize>, features: usize) -> u32 {
    let prev = prev.map(|p| p as u8 + 1).unwrap_or(0);
    (fnv1a(&[key[0], key[1], key[2], prev]) % features as u64) as u32
}

/// Context features for each position of `token_ids` emitted at `obs`.
pub fn toy_contexts(params: &ToyPolicyParams, obs: &Observation, token_ids: &[u32]) -> Vec<u32> {
    let key = obs_key(obs);
    let mut prev = None;
    token_ids
        .iter()
        .map(|&t| {
            let f = feature(key, prev, params.features);
            prev = Some(t as usize);
            f
        })
        .collect()
}

/// Exact log-probability of `tokens` at `obs` and its gradient w.r.t. the
/// logit table (dense, row-major by feature).
pub fn toy_logprob_and_grad(
    params: &ToyPolicyParams,
    obs: &Observation,
    tokens: &[&str],
) -> Result<(f64, Vec<f64>), PolicyError> {
    let ids = tokens
        .iter()
        .map(|t| params.index_of(t).map(|i| i as u32).ok_or_else(|| PolicyError::UnknownToken(t.to_string())))
        .collect::<Result<Vec<u32>, _>>()?;
    let ctx = toy_contexts(params, obs, &ids);
    let v = params.vocab_size();
    let mut grad = vec![0.0; params.len()];
    let mut lp = 0.0;
    for (&f, &y) in ctx.iter().zip(&ids) {
        let p = params.probs(f);
        lp += params.logprob(f, y as usize);
        let base = f as usize * v;
        for (j, pj) in p.iter().enumerate() {
            grad[base + j] += if j == y as usize { 1.0 - pj } else { -pj };
        }
    }
    Ok((lp, grad))
}

/// Values substituted for tool parameters, keyed by parameter name.
pub type ToyArgBinding = Map<String, Value>;

/// Samples up to [`TOY_MAX_TOKENS`] tokens per turn. The first token picks
/// the action; later tokens until the terminator carry no effect.
pub struct ToyPolicy {
    params: Arc<ToyPolicyParams>,
    binding: ToyArgBinding,
    say_text: String,
}

impl ToyPolicy {
    pub fn new(params: Arc<ToyPolicyParams>, binding: ToyArgBinding) -> Self {
        ToyPolicy { params, binding, say_text: "Your request has been handled.".into() }
    }

    pub fn params(&self) -> &ToyPolicyParams {
        &self.params
    }

    fn render_first(&self, obs: &Observation, first: Option<u32>) -> String {
        match first.map(|i| self.params.token(i as usize)) {
            Some(ToyToken::Tool(name)) => {
                let mut args = Map::new();
                if let Some(schema) = obs.tools.iter().find(|t| t.name == name) {
                    for p in &schema.parameters {
                        if let Some(v) = self.binding.get(&p.name) {
                            args.insert(p.name.clone(), v.clone());
                        }
                    }
                }
                render(&ParsedAction::function(name, Value::Object(args)))
            }
            Some(ToyToken::Say) => render(&ParsedAction::message(self.say_text.clone())),
            Some(ToyToken::Eos) | None => String::new(),
        }
    }
}

impl Policy for ToyPolicy {
    fn role(&self) -> Role {
        Role::Agent
    }

    fn id(&self) -> String {
        "toy".into()
    }

    fn next_action(&mut self, obs: &Observation, seed: u64) -> Result<PolicyOutput, PolicyError> {
        check_role(Role::Agent, obs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let key = obs_key(obs);
        let eos = self.params.index_of(EOS).expect("vocabulary has a terminator");
        let (mut ids, mut lps, mut ctx) = (Vec::new(), Vec::new(), Vec::new());
        let mut prev = None;
        for _ in 0..TOY_MAX_TOKENS {
            let f = feature(key, prev, self.params.features);
            let p = self.params.probs(f);
            let r: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = p.len() - 1;
            for (j, pj) in p.iter().enumerate() {
                acc += pj;
                if r < acc {
                    pick = j;
                    break;
                }
            }
            ids.push(pick as u32);
            lps.push(self.params.logprob(f, pick));
            ctx.push(f);
            prev = Some(pick);
            if pick == eos {
                break;
            }
        }
        let raw = self.render_first(obs, ids.first().copied());
        let mut out = PolicyOutput::from_text(Role::Agent, raw);
        out.token_ids = Some(ids);
        out.token_logprobs = Some(lps);
        out.token_contexts = Some(ctx);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs() -> Observation {
        Observation { role: Role::Agent, system_context: String::new(), tools: vec![], history: vec![], turn: 1 }
    }

    #[test]
    fn uniform_single_token() {
        let p = ToyPolicyParams::new(["a".to_string(), "b".to_string()]);
        let (lp, _) = toy_logprob_and_grad(&p, &obs(), &["a"]).unwrap();
        assert!((lp - (0.25f64).ln()).abs() < 1e-12);
        assert!(matches!(toy_logprob_and_grad(&p, &obs(), &["zzz"]), Err(PolicyError::UnknownToken(_))));
    }

    #[test]
    fn rows_are_distributions() {
        let mut p = ToyPolicyParams::new(["a".to_string(), "b".to_string(), "c".to_string()]);
        for (i, x) in p.logits.iter_mut().enumerate() {
            *x = ((i * 37) % 11) as f64 - 5.0;
        }
        for f in [0u32, 5, 1023] {
            assert!((p.probs(f).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
