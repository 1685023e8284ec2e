use super::{ParsedAction, Payload};
use crate::env::{ControlSignal, Role};
use serde_json::{Map, Value};

enum Tag<'a> {
    Absent,
    Unterminated,
    Found { body: &'a str, rest: String },
}

/// Finds the first `<name>...</name>` block; `rest` is the text with the block removed.
fn take_tag<'a>(text: &'a str, name: &str) -> Tag<'a> {
    let open = format!("<{name}>");
    let close = format!("</{name}>");
    let Some(start) = text.find(&open) else {
        return Tag::Absent;
    };
    let body_start = start + open.len();
    let Some(len) = text[body_start..].find(&close) else {
        return Tag::Unterminated;
    };
    let end = body_start + len;
    let rest = format!("{}{}", &text[..start], &text[end + close.len()..]);
    Tag::Found { body: &text[body_start..end], rest }
}

fn split_think(text: &str) -> (Option<String>, String) {
    match take_tag(text, "think") {
        Tag::Found { body, rest } => (Some(body.trim().to_string()), rest),
        _ => (None, text.to_string()),
    }
}

fn parse_function_body(body: &str) -> Payload {
    let v: Value = match serde_json::from_str(body.trim()) {
        Ok(v) => v,
        Err(e) => return Payload::Malformed { reason: format!("invalid function JSON: {e}") },
    };
    let Some(obj) = v.as_object() else {
        return Payload::Malformed { reason: "function body is not a JSON object".into() };
    };
    let Some(name) = obj.get("name").and_then(Value::as_str).filter(|n| !n.is_empty()) else {
        return Payload::Malformed { reason: "function body lacks a name".into() };
    };
    let arguments = match obj.get("arguments") {
        None | Some(Value::Null) => Map::new(),
        Some(Value::Object(m)) => m.clone(),
        Some(_) => return Payload::Malformed { reason: "function arguments must be an object".into() },
    };
    Payload::Function { name: name.to_string(), arguments }
}

fn function_block(rest: &str) -> Option<Payload> {
    match take_tag(rest, "function") {
        Tag::Absent => None,
        Tag::Unterminated => Some(Payload::Malformed { reason: "unterminated <function> tag".into() }),
        Tag::Found { body, rest } => {
            if rest.contains("<function>") {
                Some(Payload::Malformed { reason: "multiple function blocks".into() })
            } else {
                Some(parse_function_body(body))
            }
        }
    }
}

/// Parses the agent grammar: optional `<think>`, then exactly one of
/// `<function>{"name":..,"arguments":{..}}</function>` or `<message>..</message>`.
pub fn parse_agent_output(text: &str) -> ParsedAction {
    let (think, rest) = split_think(text);
    let has_fn = rest.contains("<function>");
    let has_msg = rest.contains("<message>");
    let payload = match (has_fn, has_msg) {
        (true, true) => Payload::Malformed { reason: "both function and message".into() },
        (true, false) => function_block(&rest).expect("tag present"),
        (false, true) => match take_tag(&rest, "message") {
            Tag::Found { body, .. } => Payload::Message { text: body.trim().to_string() },
            _ => Payload::Malformed { reason: "unterminated <message> tag".into() },
        },
        (false, false) => Payload::Malformed { reason: "no <function> or <message> tag".into() },
    };
    ParsedAction { think, payload }
}

/// Parses the user grammar: optional `<think>`, then `<answer>`. Control
/// markers anywhere in the answer take precedence over the text, which is
/// kept as the residual. A `<function>` block outside the answer is a user
/// tool call (dual-control domains).
pub fn parse_user_output(text: &str) -> ParsedAction {
    let (think, rest) = split_think(text);
    let payload = match take_tag(&rest, "answer") {
        Tag::Unterminated => Payload::Malformed { reason: "unterminated <answer> tag".into() },
        Tag::Absent => function_block(&rest).unwrap_or(Payload::Malformed { reason: "no <answer> tag".into() }),
        Tag::Found { body, rest } => {
            if rest.contains("<function>") {
                Payload::Malformed { reason: "both function and answer".into() }
            } else {
                answer_payload(body)
            }
        }
    };
    ParsedAction { think, payload }
}

fn answer_payload(body: &str) -> Payload {
    let found: Vec<ControlSignal> = ControlSignal::ALL.into_iter().filter(|s| body.contains(s.marker())).collect();
    match found.as_slice() {
        [] => Payload::Answer { text: body.trim().to_string() },
        [signal] => {
            let residual = body.replace(signal.marker(), " ");
            let residual = residual.split_whitespace().collect::<Vec<_>>().join(" ");
            Payload::Signal { signal: *signal, residual }
        }
        _ => Payload::Malformed { reason: "multiple control signals".into() },
    }
}

pub fn parse_output(role: Role, text: &str) -> ParsedAction {
    match role {
        Role::Agent => parse_agent_output(text),
        Role::User => parse_user_output(text),
    }
}

/// Renders a parsed action back into tagged text. Malformed payloads render
/// as their reason inside a message so the result stays printable.
pub fn render(action: &ParsedAction) -> String {
    let mut out = String::new();
    if let Some(t) = &action.think {
        out.push_str(&format!("<think>{t}</think>"));
    }
    match &action.payload {
        Payload::Function { name, arguments } => {
            let body = serde_json::json!({ "name": name, "arguments": arguments });
            out.push_str(&format!("<function>{}</function>", crate::env::canonical_json(&body)));
        }
        Payload::Message { text } => out.push_str(&format!("<message>{text}</message>")),
        Payload::Answer { text } => out.push_str(&format!("<answer>{text}</answer>")),
        Payload::Signal { signal, residual } if residual.is_empty() => {
            out.push_str(&format!("<answer>{}</answer>", signal.marker()))
        }
        Payload::Signal { signal, residual } => out.push_str(&format!("<answer>{residual} {}</answer>", signal.marker())),
        Payload::Malformed { reason } => out.push_str(&format!("<message>{reason}</message>")),
    }
    out
}
