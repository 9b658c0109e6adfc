//! Dual-control task environments.
//!
//! Both parties of a team act on the same environment through
//! `step(role, action)`. Observation components are either public or
//! private to each role, and every step reports whether its effects stayed
//! inside the actor's private components.

mod declarative;
mod environment;
mod grammar;
mod state;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use declarative::{DeclarativeEnv, DeclarativeTask, EffectOp, EffectRule};
pub use environment::{Environment, StepBudget, StepResult, TaskLogic, TerminalScorer, Transition};
pub use grammar::{parse_action, ActionSpec, Grammar, ParamKind, Parameter, ParsedAction};
pub use state::{ComponentState, Components, EnvState, ObservationView};

pub const SEND_TEAMMATE_MESSAGE: &str = "SEND_TEAMMATE_MESSAGE";
pub const WAIT_TEAMMATE_CONTINUE: &str = "WAIT_TEAMMATE_CONTINUE";
pub const FINISH: &str = "FINISH";
pub const EDITOR: &str = "editor";

/// Identifier of a team member, also used to name its `{role}/obs` channel.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Role(String);

impl Role {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn agent() -> Self {
        Self::new("agent")
    }

    pub fn user() -> Self {
        Self::new("user")
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Role {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartyKind {
    Agent,
    Human,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeamMember {
    pub role: Role,
    pub kind: PartyKind,
}

/// Ordered team roster. Order is significant: it fixes notification
/// fan-out order and turn order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Team(Vec<TeamMember>);

impl Team {
    pub fn new(members: Vec<TeamMember>) -> Result<Self, EnvError> {
        if members.is_empty() {
            return Err(EnvError::InvalidSpec("team has no members".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &members {
            if !seen.insert(&m.role) {
                return Err(EnvError::InvalidSpec(format!("duplicate role {}", m.role)));
            }
        }
        Ok(Self(members))
    }

    /// One human (`user`) and one agent (`agent`), human listed first.
    pub fn pair() -> Self {
        Self(vec![
            TeamMember {
                role: Role::user(),
                kind: PartyKind::Human,
            },
            TeamMember {
                role: Role::agent(),
                kind: PartyKind::Agent,
            },
        ])
    }

    pub fn members(&self) -> &[TeamMember] {
        &self.0
    }

    pub fn roles(&self) -> impl Iterator<Item = &Role> {
        self.0.iter().map(|m| &m.role)
    }

    pub fn kind_of(&self, role: &Role) -> Option<PartyKind> {
        self.0.iter().find(|m| &m.role == role).map(|m| m.kind)
    }

    pub fn contains(&self, role: &Role) -> bool {
        self.kind_of(role).is_some()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    Public,
    /// Each role owns its own copy, visible only to that role.
    Private,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub name: String,
    pub visibility: Visibility,
}

impl ComponentSpec {
    pub fn public(name: &str) -> Self {
        Self {
            name: name.into(),
            visibility: Visibility::Public,
        }
    }

    pub fn private(name: &str) -> Self {
        Self {
            name: name.into(),
            visibility: Visibility::Private,
        }
    }
}

/// Declarative description of a task environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEnvironmentSpec {
    pub task_id: String,
    pub task_description: String,
    pub action_specs: Vec<ActionSpec>,
    pub observation_schema: Vec<ComponentSpec>,
    pub step_limit: u32,
}

impl TaskEnvironmentSpec {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.step_limit == 0 {
            return Err(EnvError::InvalidSpec("step_limit must be at least 1".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for c in &self.observation_schema {
            if !names.insert(&c.name) {
                return Err(EnvError::InvalidSpec(format!(
                    "component {} declared more than once",
                    c.name
                )));
            }
        }
        Grammar::new(self.action_specs.clone()).map(|_| ())
    }

    pub fn component(&self, name: &str) -> Option<&ComponentSpec> {
        self.observation_schema.iter().find(|c| c.name == name)
    }

    pub fn from_json(s: &str) -> Result<Self, EnvError> {
        let spec: Self =
            serde_json::from_str(s).map_err(|e| EnvError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }
}

/// A concrete shared goal for one session.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TaskInstance {
    pub task_id: String,
    pub instance_id: String,
    pub query: String,
    /// Knowledge given only to the simulated human.
    #[serde(default)]
    pub hidden_info: Vec<String>,
    /// Case-insensitive regular expressions the final editor text should satisfy.
    #[serde(default)]
    pub checklist: Vec<String>,
    /// Task-specific fixture references (dataset names, seed library, ...).
    #[serde(default)]
    pub data: serde_json::Value,
}

/// The two collaboration acts every environment accepts alongside its task actions.
pub fn collaboration_specs() -> Vec<ActionSpec> {
    vec![
        ActionSpec::new(
            SEND_TEAMMATE_MESSAGE,
            &[("message", ParamKind::Text)],
            "Send a message to your teammate(s).",
        ),
        ActionSpec::new(
            WAIT_TEAMMATE_CONTINUE,
            &[],
            "Wait for your teammate(s) to continue; takes no effect on the environment.",
        ),
    ]
}

pub fn collaboration_grammar() -> Grammar {
    Grammar::new(collaboration_specs()).expect("static grammar")
}

pub fn send_message_action(message: &str) -> String {
    format!("{SEND_TEAMMATE_MESSAGE}(message={message})")
}

pub fn wait_action() -> String {
    format!("{WAIT_TEAMMATE_CONTINUE}()")
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
    #[error("invalid action: {0:?} matches no action spec")]
    InvalidAction(String),
    #[error("grammar ambiguity: {action:?} matches both {first} and {second}")]
    AmbiguousGrammar {
        action: String,
        first: String,
        second: String,
    },
    #[error("unknown task id {0}")]
    UnknownTask(String),
    #[error("fixture data missing: {0}")]
    FixtureMissing(String),
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("role {0} is not part of the team")]
    UnknownRole(Role),
    #[error("role {role} may not take action {action}")]
    ActionNotPermitted { role: Role, action: String },
    #[error("invalid parameter for {action}: {reason}")]
    InvalidParameter { action: String, reason: String },
    #[error("action {0} declared private but changed shared state")]
    PrivacyViolation(String),
    #[error("executor unavailable: {0}")]
    ExecutorUnavailable(String),
}
