use super::action::{Action, HistoryEntry, JointAction, Observation, ToolCall, ToolResult};
use super::rules::RuleId;
use super::state::{EnvState, Entity, InteractionMeta, TaskBrief};
use super::task::TaskSpec;
use super::{airline, canonical_json, toy, EnvError, Role};
use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

const AIRLINE_FIXTURE: &str = include_str!("../../fixtures/airline/domain.json");
const TOY_FIXTURE: &str = include_str!("../../fixtures/toy/domain.json");

/// Selects the tool implementations behind a fixture's schemas.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Airline,
    ToyRefund,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    String,
    Integer,
    Number,
    Boolean,
    Array,
    Object,
}

impl ParamType {
    fn accepts(self, v: &Value) -> bool {
        match self {
            ParamType::String => v.is_string(),
            ParamType::Integer => v.is_i64() || v.is_u64(),
            ParamType::Number => v.is_number(),
            ParamType::Boolean => v.is_boolean(),
            ParamType::Array => v.is_array(),
            ParamType::Object => v.is_object(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: ParamType,
    #[serde(default = "default_true")]
    pub required: bool,
}

fn default_true() -> bool {
    true
}

/// Which party may invoke a tool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolRole {
    Agent,
    User,
    Both,
}

impl ToolRole {
    pub fn permits(self, role: Role) -> bool {
        matches!((self, role), (ToolRole::Both, _) | (ToolRole::Agent, Role::Agent) | (ToolRole::User, Role::User))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub parameters: Vec<ParamSpec>,
    pub mutating: bool,
    pub role: ToolRole,
}

impl ToolSchema {
    /// Same schema with required parameters listed first (stable order otherwise).
    pub fn canonical(mut self) -> Self {
        self.parameters.sort_by_key(|p| !p.required);
        self
    }

    pub fn validate_args(&self, args: &Map<String, Value>) -> Result<(), EnvError> {
        let violation = |detail: String| EnvError::SchemaViolation { tool: self.name.clone(), detail };
        for p in &self.parameters {
            match args.get(&p.name) {
                None | Some(Value::Null) if p.required => {
                    return Err(violation(format!("missing required argument `{}`", p.name)))
                }
                None | Some(Value::Null) => {}
                Some(v) if !p.kind.accepts(v) => {
                    return Err(violation(format!("argument `{}` must be {:?}, got {v}", p.name, p.kind)))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = args.keys().find(|k| !self.parameters.iter().any(|p| &p.name == *k)) {
            return Err(violation(format!("unexpected argument `{extra}`")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ToolRegistry {
    tools: Vec<ToolSchema>,
    index: BTreeMap<String, usize>,
}

impl ToolRegistry {
    pub fn new(tools: Vec<ToolSchema>) -> Result<Self, EnvError> {
        let mut index = BTreeMap::new();
        let tools: Vec<ToolSchema> = tools.into_iter().map(ToolSchema::canonical).collect();
        for (i, t) in tools.iter().enumerate() {
            if index.insert(t.name.clone(), i).is_some() {
                return Err(EnvError::InvalidFixture(format!("duplicate tool name `{}`", t.name)));
            }
        }
        Ok(ToolRegistry { tools, index })
    }

    pub fn get(&self, name: &str) -> Option<&ToolSchema> {
        self.index.get(name).map(|&i| &self.tools[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ToolSchema> {
        self.tools.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tools.iter().map(|t| t.name.as_str())
    }

    pub fn is_mutating(&self, name: &str) -> bool {
        self.get(name).map(|t| t.mutating).unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleEntry {
    pub id: RuleId,
    #[serde(default)]
    pub description: String,
    #[serde(default = "default_true")]
    pub enforced: bool,
}

/// How much of the agent's tool activity the user sees in dual-control mode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolVisibility {
    #[default]
    Hidden,
    ResultsOnly,
    Full,
}

/// On-disk domain fixture: `{tools, entities, policy_rules}` plus a header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainFixture {
    pub name: String,
    pub kind: DomainKind,
    pub now: String,
    #[serde(default)]
    pub dual_control: bool,
    #[serde(default)]
    pub agent_policy: String,
    #[serde(default)]
    pub user_tool_visibility: ToolVisibility,
    pub tools: Vec<ToolSchema>,
    pub entities: BTreeMap<String, Entity>,
    #[serde(default)]
    pub policy_rules: Vec<RuleEntry>,
}

#[derive(Clone, Debug)]
pub struct Domain {
    fixture: DomainFixture,
    registry: ToolRegistry,
    now: NaiveDateTime,
}

/// A state transition plus the tool result it produced, if any.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: EnvState,
    pub tool_result: Option<ToolResult>,
}

impl Domain {
    pub fn from_fixture(fixture: DomainFixture) -> Result<Self, EnvError> {
        let registry = ToolRegistry::new(fixture.tools.clone())?;
        let implemented: &[&str] = match fixture.kind {
            DomainKind::Airline => airline::TOOLS,
            DomainKind::ToyRefund => toy::TOOLS,
        };
        if let Some(t) = registry.names().find(|n| !implemented.contains(n)) {
            return Err(EnvError::InvalidFixture(format!("tool `{t}` has no implementation for {:?}", fixture.kind)));
        }
        let mut seen = BTreeSet::new();
        for r in &fixture.policy_rules {
            if !seen.insert(r.id) {
                return Err(EnvError::InvalidFixture(format!("duplicate rule `{}`", r.id)));
            }
        }
        let now = NaiveDateTime::parse_from_str(&fixture.now, "%Y-%m-%dT%H:%M:%S")
            .map_err(|e| EnvError::InvalidFixture(format!("bad `now` timestamp: {e}")))?;
        let domain = Domain { fixture, registry, now };
        domain.base_state(0).check_integrity().map_err(EnvError::InvalidFixture)?;
        Ok(domain)
    }

    pub fn from_json(text: &str) -> Result<Self, EnvError> {
        let fixture: DomainFixture =
            serde_json::from_str(text).map_err(|e| EnvError::InvalidFixture(e.to_string()))?;
        Self::from_fixture(fixture)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EnvError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| EnvError::InvalidFixture(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// The shipped airline reference domain.
    pub fn airline() -> Self {
        Self::from_json(AIRLINE_FIXTURE).expect("shipped airline fixture is valid")
    }

    /// The shipped five-tool refund desk used for toy RL.
    pub fn toy_refund() -> Self {
        Self::from_json(TOY_FIXTURE).expect("shipped toy fixture is valid")
    }

    pub fn name(&self) -> &str {
        &self.fixture.name
    }

    pub fn kind(&self) -> DomainKind {
        self.fixture.kind
    }

    pub fn fixture(&self) -> &DomainFixture {
        &self.fixture
    }

    pub fn tools(&self) -> &ToolRegistry {
        &self.registry
    }

    pub fn rules(&self) -> &[RuleEntry] {
        &self.fixture.policy_rules
    }

    pub fn has_rule(&self, id: RuleId) -> bool {
        self.fixture.policy_rules.iter().any(|r| r.id == id)
    }

    pub fn now(&self) -> NaiveDateTime {
        self.now
    }

    pub fn dual_control(&self) -> bool {
        self.fixture.dual_control
    }

    pub fn set_dual_control(&mut self, on: bool) {
        self.fixture.dual_control = on;
    }

    pub fn set_user_tool_visibility(&mut self, v: ToolVisibility) {
        self.fixture.user_tool_visibility = v;
    }

    /// Toggles enforcement of one rule; returns false if the rule is not in the table.
    pub fn set_enforced(&mut self, id: RuleId, enforced: bool) -> bool {
        match self.fixture.policy_rules.iter_mut().find(|r| r.id == id) {
            Some(r) => {
                r.enforced = enforced;
                true
            }
            None => false,
        }
    }

    pub fn entity_exists(&self, id: &str) -> bool {
        self.fixture.entities.contains_key(id)
    }

    /// Fixture entities with empty interaction metadata and no task attached.
    pub fn base_state(&self, seed: u64) -> EnvState {
        EnvState {
            domain: self.fixture.name.clone(),
            entities: self.fixture.entities.clone(),
            interaction_meta: InteractionMeta { seed, ..InteractionMeta::default() },
            brief: TaskBrief::default(),
        }
    }

    /// Initial state for `(task, seed)`.
    pub fn reset(&self, task: &TaskSpec, seed: u64) -> Result<EnvState, EnvError> {
        if let Some(missing) = task.referenced_entities().into_iter().find(|id| !self.entity_exists(id)) {
            return Err(EnvError::UnknownDomainEntity(missing));
        }
        let mut state = self.base_state(seed);
        state.brief = TaskBrief {
            task_id: task.id.clone(),
            context: task.context.clone(),
            reason_for_call: task.reason_for_call.clone(),
            known_info: task.known_info.clone(),
            task_instructions: task.task_instructions.clone(),
        };
        Ok(state)
    }

    pub fn can_call(&self, role: Role, schema: &ToolSchema) -> bool {
        schema.role.permits(role) && (role == Role::Agent || self.fixture.dual_control)
    }

    /// Runs one tool call. Read-only tools return the input state unchanged.
    pub fn execute_tool(&self, state: &EnvState, call: &ToolCall) -> Result<(EnvState, ToolResult), EnvError> {
        if state.is_terminal() {
            return Err(EnvError::Terminal);
        }
        let schema = self.registry.get(&call.name).ok_or_else(|| EnvError::UnknownTool(call.name.clone()))?;
        if !self.can_call(call.caller, schema) {
            return Err(EnvError::PermissionDenied { tool: call.name.clone(), role: call.caller });
        }
        schema.validate_args(&call.arguments)?;
        for rule in self.fixture.policy_rules.iter().filter(|r| r.enforced) {
            if let Some(detail) = rule.id.violation(state, call, self.now) {
                return Err(EnvError::PolicyRejection { rule: rule.id, detail });
            }
        }
        let mut next = state.clone();
        let output = match self.fixture.kind {
            DomainKind::Airline => airline::run(self, &mut next, call)?,
            DomainKind::ToyRefund => toy::run(&mut next, call)?,
        };
        let result = ToolResult::success(canonical_json(&output));
        if schema.mutating {
            Ok((next, result))
        } else {
            Ok((state.clone(), result))
        }
    }

    /// Role-local view of the state.
    pub fn observe(&self, state: &EnvState, role: Role) -> Observation {
        let system_context = match role {
            Role::Agent => self.fixture.agent_policy.clone(),
            Role::User => render_brief(&state.brief),
        };
        let tools = self.registry.iter().filter(|t| self.can_call(role, t)).cloned().collect();
        let history = state
            .history()
            .iter()
            .filter(|e| self.visible_to(role, e))
            .cloned()
            .collect();
        Observation { role, system_context, tools, history, turn: state.turn() }
    }

    fn visible_to(&self, role: Role, entry: &HistoryEntry) -> bool {
        match (role, entry) {
            (Role::Agent, _) => true,
            (Role::User, HistoryEntry::ToolCall { caller: Role::Agent, .. }) => {
                self.fixture.user_tool_visibility == ToolVisibility::Full
            }
            (Role::User, HistoryEntry::ToolResult { caller: Role::Agent, .. }) => {
                self.fixture.user_tool_visibility != ToolVisibility::Hidden
            }
            (Role::User, _) => true,
        }
    }

    /// Applies a joint action and reports the tool result if a tool ran.
    /// Tool-level failures are recorded in the history rather than raised.
    pub fn step(&self, state: &EnvState, joint: &JointAction) -> Result<Transition, EnvError> {
        if state.is_terminal() {
            return Err(EnvError::Terminal);
        }
        let (role, action) = match (&joint.agent, &joint.user) {
            (Action::Empty, Action::Empty) => return Err(EnvError::NoAction),
            (a, Action::Empty) => (Role::Agent, a),
            (Action::Empty, u) => (Role::User, u),
            _ => return Err(EnvError::BothActing),
        };
        let mut tool_result = None;
        let mut next = match action {
            Action::AgentMessage(text) | Action::UserMessage(text) => {
                let author = if matches!(action, Action::AgentMessage(_)) { Role::Agent } else { Role::User };
                if author != role {
                    return Err(EnvError::RoleMismatch(format!("{author} message placed in the {role} slot")));
                }
                let mut next = state.clone();
                next.interaction_meta.history.push(HistoryEntry::Message { role, text: text.clone() });
                next
            }
            Action::ToolCall(call) => {
                if call.caller != role {
                    return Err(EnvError::RoleMismatch(format!("{} tool call placed in the {role} slot", call.caller)));
                }
                let (mut next, result) = match self.execute_tool(state, call) {
                    Ok(ok) => ok,
                    Err(e) if e.is_tool_failure() => (state.clone(), ToolResult::failure(&e)),
                    Err(e) => return Err(e),
                };
                let h = &mut next.interaction_meta.history;
                h.push(HistoryEntry::ToolCall { caller: role, name: call.name.clone(), arguments: call.arguments.clone() });
                h.push(HistoryEntry::ToolResult {
                    caller: role,
                    name: call.name.clone(),
                    ok: result.ok,
                    output: result.output.clone(),
                });
                tool_result = Some(result);
                next
            }
            Action::ControlSignal(signal) => {
                let mut next = state.clone();
                next.interaction_meta.history.push(HistoryEntry::Signal { role, signal: *signal });
                next.terminate(signal.termination());
                next
            }
            Action::Empty => unreachable!("empty slot filtered above"),
        };
        next.interaction_meta.turn += 1;
        Ok(Transition { state: next, tool_result })
    }

    pub fn apply(&self, state: &EnvState, joint: &JointAction) -> Result<EnvState, EnvError> {
        self.step(state, joint).map(|t| t.state)
    }
}

fn render_brief(brief: &TaskBrief) -> String {
    format!(
        "Context: {}\nReason for call: {}\nKnown information: {}\nTask instructions: {}",
        brief.context, brief.reason_for_call, brief.known_info, brief.task_instructions
    )
}
