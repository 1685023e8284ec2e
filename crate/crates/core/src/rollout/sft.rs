use super::{RolloutError, Trajectory};
use crate::env::{Domain, Role};
use crate::policy::{ChatMessage, Payload};
use serde::{Deserialize, Serialize};

/// Context up to turn t−1 and the text produced at turn t.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub messages: Vec<ChatMessage>,
    pub target: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SftFormat {
    Jsonl,
    JsonArray,
}

/// One record per turn authored by `side`, including that side's tool calls.
pub fn export_sft(domain: &Domain, trajectories: &[Trajectory], side: Role) -> Result<Vec<SftRecord>, RolloutError> {
    let mut out = Vec::new();
    for traj in trajectories {
        let system = domain.observe(&traj.final_state, side).system_context;
        let mut context = vec![ChatMessage::system(system)];
        for turn in &traj.turns {
            if turn.actor == side {
                out.push(SftRecord { messages: context.clone(), target: turn.raw_text.clone() });
                context.push(ChatMessage::assistant(turn.raw_text.clone()));
                if let (Payload::Function { name, .. }, Some(r)) = (&turn.parsed.payload, &turn.tool_result) {
                    context.push(ChatMessage::new("tool", format!("Tool result ({name}, {}): {}", if r.ok { "ok" } else { "error" }, r.output)));
                }
            } else {
                let text = match &turn.parsed.payload {
                    Payload::Message { text } | Payload::Answer { text } => text.clone(),
                    Payload::Signal { residual, signal } => format!("{residual} {}", signal.marker()).trim().to_string(),
                    Payload::Malformed { .. } => turn.raw_text.clone(),
                    Payload::Function { .. } => continue,
                };
                context.push(ChatMessage::user(text));
            }
        }
    }
    if out.is_empty() {
        return Err(RolloutError::EmptySelection);
    }
    Ok(out)
}

pub fn write_sft(records: &[SftRecord], format: SftFormat) -> String {
    match format {
        SftFormat::Jsonl => records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect(),
        SftFormat::JsonArray => serde_json::to_string_pretty(records).expect("records serialize") + "\n",
    }
}

pub fn read_sft(text: &str, format: SftFormat) -> Result<Vec<SftRecord>, RolloutError> {
    match format {
        SftFormat::Jsonl => text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(RolloutError::from))
            .collect(),
        SftFormat::JsonArray => Ok(serde_json::from_str(text)?),
    }
}
