use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    collaboration_specs, Components, EnvError, EnvState, Grammar, ObservationView, ParsedAction,
    PartyKind, Role, TaskEnvironmentSpec, TaskInstance, Team, Visibility, FINISH,
};

/// Task-specific transition semantics plugged into an [`Environment`].
///
/// Implementations keep no mutable state of their own: everything that
/// changes during a session lives in the [`Components`], which keeps replay
/// a pure function of (fixtures, instance, actions).
pub trait TaskLogic: Send {
    fn spec(&self) -> &TaskEnvironmentSpec;

    /// Fills initial component values for `instance`.
    fn init(
        &self,
        components: &mut Components,
        instance: &TaskInstance,
        team: &Team,
    ) -> Result<(), EnvError>;

    /// Applies a task action (never `FINISH`, which the environment handles).
    /// Must validate before mutating, or leave `components` as it found it
    /// on error.
    fn apply(
        &self,
        components: &mut Components,
        role: &Role,
        action: &ParsedAction,
    ) -> Result<Transition, EnvError>;

    fn render(&self, _component: &str, value: &Value) -> String {
        match value {
            Value::Null => String::new(),
            Value::String(s) => s.clone(),
            other => serde_json::to_string_pretty(other).unwrap_or_default(),
        }
    }
}

/// What a task action did, as declared by the task logic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Transition {
    pub private: bool,
    pub finish: bool,
}

impl Transition {
    pub fn shared() -> Self {
        Self::default()
    }

    pub fn private() -> Self {
        Self {
            private: true,
            finish: false,
        }
    }
}

/// Terminal reward hook: task performance of the final state, if known.
pub type TerminalScorer = Arc<dyn Fn(&EnvState) -> Option<f64> + Send + Sync>;

/// Which actions consume the step budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepBudget {
    pub step_limit: u32,
    /// `SEND_TEAMMATE_MESSAGE` counts; `WAIT_TEAMMATE_CONTINUE` never does.
    pub count_messages: bool,
    pub count_human_actions: bool,
}

impl StepBudget {
    pub fn new(step_limit: u32) -> Self {
        Self {
            step_limit,
            count_messages: true,
            count_human_actions: false,
        }
    }

    fn counts(&self, kind: PartyKind) -> bool {
        kind == PartyKind::Agent || self.count_human_actions
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: ObservationView,
    pub reward: f64,
    pub done: bool,
    pub private: bool,
    /// Whether the action consumed budget.
    pub counted: bool,
}

pub struct Environment {
    logic: Box<dyn TaskLogic>,
    task_grammar: Grammar,
    full_grammar: Grammar,
    team: Team,
    budget: StepBudget,
    state: EnvState,
    scorer: Option<TerminalScorer>,
}

impl std::fmt::Debug for Environment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Environment")
            .field("task_id", &self.spec().task_id)
            .field("team", &self.team)
            .field("budget", &self.budget)
            .field("state", &self.state)
            .finish_non_exhaustive()
    }
}

impl Environment {
    /// Initializes a fresh episode and returns each role's first view.
    pub fn reset(
        logic: Box<dyn TaskLogic>,
        instance: &TaskInstance,
        team: Team,
        budget: StepBudget,
    ) -> Result<(Self, BTreeMap<Role, ObservationView>), EnvError> {
        let spec = logic.spec();
        spec.validate()?;
        if instance.task_id != spec.task_id {
            return Err(EnvError::UnknownTask(instance.task_id.clone()));
        }
        if budget.step_limit == 0 {
            return Err(EnvError::InvalidSpec("step_limit must be at least 1".into()));
        }
        let task_grammar = Grammar::new(spec.action_specs.clone())?;
        let full_grammar = task_grammar.extend(&Grammar::new(collaboration_specs())?)?;
        let mut components = Components::from_schema(&spec.observation_schema, &team);
        logic.init(&mut components, instance, &team)?;
        let env = Self {
            logic,
            task_grammar,
            full_grammar,
            team,
            budget,
            state: EnvState {
                components,
                done: false,
                agent_action_count: 0,
                version: 0,
            },
            scorer: None,
        };
        let views = env
            .team
            .roles()
            .map(|r| Ok((r.clone(), env.observation_view(r)?)))
            .collect::<Result<_, EnvError>>()?;
        Ok((env, views))
    }

    pub fn with_scorer(mut self, scorer: TerminalScorer) -> Self {
        self.scorer = Some(scorer);
        self
    }

    pub fn spec(&self) -> &TaskEnvironmentSpec {
        self.logic.spec()
    }

    pub fn team(&self) -> &Team {
        &self.team
    }

    pub fn budget(&self) -> StepBudget {
        self.budget
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    /// Task actions only.
    pub fn task_grammar(&self) -> &Grammar {
        &self.task_grammar
    }

    /// Task actions plus collaboration acts.
    pub fn grammar(&self) -> &Grammar {
        &self.full_grammar
    }

    pub fn step(&mut self, role: &Role, action: &ParsedAction) -> Result<StepResult, EnvError> {
        if self.state.done {
            return Err(EnvError::EpisodeFinished);
        }
        let kind = self
            .team
            .kind_of(role)
            .ok_or_else(|| EnvError::UnknownRole(role.clone()))?;
        let spec = self
            .task_grammar
            .spec(&action.name)
            .ok_or_else(|| EnvError::InvalidAction(action.render()))?;
        if !spec.permits(role) {
            return Err(EnvError::ActionNotPermitted {
                role: role.clone(),
                action: action.name.clone(),
            });
        }

        let before = self.state.components.clone();
        let transition = if action.name == FINISH {
            Transition {
                private: false,
                finish: true,
            }
        } else {
            match self.logic.apply(&mut self.state.components, role, action) {
                Ok(t) => t,
                Err(e) => {
                    self.state.components = before;
                    return Err(e);
                }
            }
        };
        if transition.private && !self.confined_to(role, &before) {
            self.state.components = before;
            return Err(EnvError::PrivacyViolation(action.name.clone()));
        }

        self.state.version += 1;
        let counted = self.budget.counts(kind);
        if counted {
            self.state.agent_action_count += 1;
        }
        let done = transition.finish || self.state.agent_action_count >= self.budget.step_limit;
        self.state.done = done;
        let reward = if done {
            self.scorer
                .as_ref()
                .and_then(|s| s(&self.state))
                .unwrap_or(0.0)
        } else {
            0.0
        };
        Ok(StepResult {
            obs: self.observation_view(role)?,
            reward,
            done,
            private: transition.private,
            counted,
        })
    }

    /// Charges a `SEND_TEAMMATE_MESSAGE` against the budget when configured.
    /// Returns `(counted, done)`.
    pub fn charge_message(&mut self, role: &Role) -> Result<(bool, bool), EnvError> {
        if self.state.done {
            return Err(EnvError::EpisodeFinished);
        }
        let kind = self
            .team
            .kind_of(role)
            .ok_or_else(|| EnvError::UnknownRole(role.clone()))?;
        let counted = self.budget.count_messages && self.budget.counts(kind);
        if counted {
            self.state.agent_action_count += 1;
            if self.state.agent_action_count >= self.budget.step_limit {
                self.state.done = true;
            }
        }
        Ok((counted, self.state.done))
    }

    fn confined_to(&self, role: &Role, before: &Components) -> bool {
        self.state.components.diff(before).iter().all(|(name, roles)| {
            let private = self
                .spec()
                .component(name)
                .is_some_and(|c| c.visibility == Visibility::Private);
            private && roles.iter().all(|r| r == role)
        })
    }

    pub fn observation_view(&self, role: &Role) -> Result<ObservationView, EnvError> {
        if !self.team.contains(role) {
            return Err(EnvError::UnknownRole(role.clone()));
        }
        let mut components = BTreeMap::new();
        for c in &self.spec().observation_schema {
            let value = match c.visibility {
                Visibility::Public => self.state.components.shared(&c.name)?,
                Visibility::Private => self.state.components.private(&c.name, role)?,
            };
            components.insert(c.name.clone(), self.logic.render(&c.name, value));
        }
        Ok(ObservationView {
            role: role.clone(),
            components,
            timestamp: self.state.version,
        })
    }
}
