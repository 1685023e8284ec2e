use super::{
    ChatBackend, ChatClient, ChatPolicy, ClientConfig, HeuristicPolicy, Policy, Script, ToyArgBinding, ToyPolicy,
    ToyPolicyParams,
};
use crate::env::{Domain, Role, TaskSpec};
use serde_json::Value;
use std::fmt;
use std::sync::Arc;

/// A policy named on the command line:
/// `scripted[:script.json]`, `toy[:params.json]`, `heuristic` or `remote:<url>`.
#[derive(Clone)]
pub enum PolicySpec {
    Scripted(Script),
    Toy(Option<Arc<ToyPolicyParams>>),
    Heuristic,
    Remote(Arc<ChatClient>),
}

impl fmt::Debug for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::Scripted(s) => write!(f, "scripted:{}", s.name),
            PolicySpec::Toy(_) => f.write_str("toy"),
            PolicySpec::Heuristic => f.write_str("heuristic"),
            PolicySpec::Remote(c) => write!(f, "remote:{}", c.config().url),
        }
    }
}

impl PolicySpec {
    /// Parses a spec for `role`; `default_script` backs a bare `scripted`.
    pub fn parse(text: &str, role: Role, default_script: &Script) -> Result<Self, String> {
        let (kind, arg) = match text.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (text, None),
        };
        let spec = match (kind, arg) {
            ("scripted", None) => PolicySpec::Scripted(default_script.clone()),
            ("scripted", Some(path)) => {
                PolicySpec::Scripted(Script::load(path).map_err(|e| format!("cannot load script {path}: {e}"))?)
            }
            ("toy", None) => PolicySpec::Toy(None),
            ("toy", Some(path)) => {
                let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {path}: {e}"))?;
                let params: ToyPolicyParams =
                    serde_json::from_str(&text).map_err(|e| format!("bad toy parameters in {path}: {e}"))?;
                PolicySpec::Toy(Some(Arc::new(params)))
            }
            ("heuristic", None) => PolicySpec::Heuristic,
            ("remote", Some(url)) if !url.is_empty() => {
                let cfg = ClientConfig { url: url.to_string(), ..ClientConfig::default() };
                PolicySpec::Remote(Arc::new(ChatClient::new(cfg).map_err(|e| e.to_string())?))
            }
            _ => return Err(format!("unknown policy `{text}` (expected scripted[:path], toy[:params], heuristic or remote:<url>)")),
        };
        if role == Role::User && matches!(spec, PolicySpec::Toy(_)) {
            return Err("the toy policy only plays the agent".into());
        }
        if let PolicySpec::Scripted(s) = &spec {
            if s.steps(role).is_empty() {
                return Err(format!("script `{}` has no {role} turns", s.name));
            }
        }
        Ok(spec)
    }

    /// A fresh policy for one episode of `task`.
    pub fn build(&self, role: Role, domain: &Domain, task: &TaskSpec) -> Box<dyn Policy> {
        match self {
            PolicySpec::Scripted(s) => Box::new(s.policy(role)),
            PolicySpec::Toy(params) => {
                let params = params.clone().unwrap_or_else(|| Arc::new(ToyPolicyParams::for_domain(domain)));
                Box::new(ToyPolicy::new(params, binding_from(task)))
            }
            PolicySpec::Heuristic => Box::new(match role {
                Role::Agent => HeuristicPolicy::agent(),
                Role::User => HeuristicPolicy::user(),
            }),
            PolicySpec::Remote(client) => {
                let backend: Arc<dyn ChatBackend> = client.clone();
                let (worker, id) = match role {
                    Role::Agent => ("Trajectory", "remote:agent"),
                    Role::User => ("UserSimulator", "remote:user"),
                };
                let prompt = crate::synth::default_prompts().remove(worker).unwrap_or_default();
                Box::new(ChatPolicy::new(role, backend, id).with_prompt(Some(worker), prompt))
            }
        }
    }
}

/// String-valued selected parameters, used to fill toy tool arguments.
pub fn binding_from(task: &TaskSpec) -> ToyArgBinding {
    task.selected_parameters.iter().filter(|(_, v)| matches!(v, Value::String(_))).map(|(k, v)| (k.clone(), v.clone())).collect()
}
