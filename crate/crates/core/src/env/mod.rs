//! Dual-control tool environment.
//!
//! A [`Domain`] is loaded from a fixture file (`{tools, entities, policy_rules}`)
//! and acts as the transition function over [`EnvState`] values. States are
//! plain owned data: every operation takes a state by reference and returns a
//! new one, so episodes can run in parallel without sharing anything mutable.

mod action;
mod airline;
mod domain;
mod rules;
mod state;
mod task;
mod toy;

pub use action::{Action, ControlSignal, HistoryEntry, JointAction, Observation, ToolCall, ToolFailure, ToolResult};
pub use domain::{
    Domain, DomainFixture, DomainKind, ParamSpec, ParamType, RuleEntry, ToolRegistry, ToolRole, ToolSchema,
    ToolVisibility, Transition,
};
pub use rules::{RuleId, UnknownRule};
pub use state::{
    Cabin, CabinMap, Customer, EnvState, Entity, Flight, FlightDate, FlightStatus, FlightType, InteractionMeta,
    Membership, Name, Order, OrderStatus, Passenger, Payment, PaymentMethod, PaymentSource, Reservation,
    ReservationStatus, Segment, TaskBrief, Termination, User,
};
pub use task::TaskSpec;

use serde::{Deserialize, Serialize};
use std::fmt;

/// The two parties of a dialogue.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Agent,
    User,
}

impl Role {
    pub fn other(self) -> Role {
        match self {
            Role::Agent => Role::User,
            Role::User => Role::Agent,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Agent => "agent",
            Role::User => "user",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("task references unknown domain entity `{0}`")]
    UnknownDomainEntity(String),
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("schema violation in `{tool}`: {detail}")]
    SchemaViolation { tool: String, detail: String },
    #[error("policy rule `{rule}` rejected the call: {detail}")]
    PolicyRejection { rule: RuleId, detail: String },
    #[error("{role} is not permitted to call `{tool}`")]
    PermissionDenied { tool: String, role: Role },
    #[error("{kind} `{id}` not found")]
    EntityNotFound { kind: String, id: String },
    #[error("invalid argument to `{tool}`: {detail}")]
    InvalidArgument { tool: String, detail: String },
    #[error("both parties acted in the same turn")]
    BothActing,
    #[error("neither party acted")]
    NoAction,
    #[error("{0}")]
    RoleMismatch(String),
    #[error("episode already terminated")]
    Terminal,
    #[error("invalid fixture: {0}")]
    InvalidFixture(String),
}

impl EnvError {
    /// Stable machine-readable kind, used in serialized tool failures.
    pub fn kind(&self) -> &'static str {
        match self {
            EnvError::UnknownDomainEntity(_) => "unknown_domain_entity",
            EnvError::UnknownTool(_) => "unknown_tool",
            EnvError::SchemaViolation { .. } => "schema_violation",
            EnvError::PolicyRejection { .. } => "policy_rejection",
            EnvError::PermissionDenied { .. } => "permission_denied",
            EnvError::EntityNotFound { .. } => "not_found",
            EnvError::InvalidArgument { .. } => "invalid_argument",
            EnvError::BothActing => "both_acting",
            EnvError::NoAction => "no_action",
            EnvError::RoleMismatch(_) => "role_mismatch",
            EnvError::Terminal => "terminal",
            EnvError::InvalidFixture(_) => "invalid_fixture",
        }
    }

    /// Errors a tool call can produce without ending the episode.
    pub fn is_tool_failure(&self) -> bool {
        matches!(
            self,
            EnvError::UnknownTool(_)
                | EnvError::SchemaViolation { .. }
                | EnvError::PolicyRejection { .. }
                | EnvError::PermissionDenied { .. }
                | EnvError::EntityNotFound { .. }
                | EnvError::InvalidArgument { .. }
        )
    }
}

/// Serializes through `serde_json::Value`, whose maps are ordered, so the
/// output has sorted keys regardless of struct field order.
pub fn canonical_json<T: Serialize + ?Sized>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("serializable value");
    serde_json::to_string(&v).expect("json value always serializes")
}
