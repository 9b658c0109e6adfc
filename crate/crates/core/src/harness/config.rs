use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::agents::AgentVariant;
use crate::bus::{CoordinatorConfig, InteractionMode};
use crate::env::{PartyKind, Role, StepBudget, Team, TeamMember};

/// Who drives a role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum PartyPolicy {
    Agent { variant: AgentVariant },
    SimulatedHuman,
    /// Fixed action list, one per notification; with `repeat` the last
    /// action is reused once the list runs out.
    Scripted {
        actions: Vec<String>,
        #[serde(default)]
        repeat: bool,
    },
    /// A person connected through the gateway.
    LiveHuman,
}

impl PartyPolicy {
    pub fn name(&self) -> String {
        match self {
            Self::Agent { variant } => variant.name().into(),
            Self::SimulatedHuman => "simulated_human".into(),
            Self::Scripted { .. } => "scripted".into(),
            Self::LiveHuman => "live-human".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartyConfig {
    pub role: Role,
    pub kind: PartyKind,
    #[serde(flatten)]
    pub policy: PartyPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    #[default]
    InProcess,
    Networked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Answers from a prompt-hash transcript.
    Replay,
    /// Answers from substring rules.
    #[default]
    Scripted,
    /// OpenAI-compatible chat endpoint configured through the environment.
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub task_id: String,
    pub instance_id: String,
    /// Roster in team order; turn-taking starts with the first entry unless
    /// `first_turn` says otherwise.
    pub team: Vec<PartyConfig>,
    #[serde(default)]
    pub mode: InteractionMode,
    pub step_limit: u32,
    #[serde(default)]
    pub count_human_actions: bool,
    pub idle_threshold_secs: f64,
    /// Session length cap; logical seconds in simulated runs.
    pub wall_clock_limit_secs: u64,
    pub seed: u64,
    #[serde(default)]
    pub bus: BusKind,
    #[serde(default)]
    pub backend: BackendKind,
    /// Script or transcript file for the scripted and replay backends.
    #[serde(default)]
    pub backend_path: Option<PathBuf>,
    #[serde(default)]
    pub first_turn: Option<Role>,
    /// Bounds on simulated decision latency, in milliseconds.
    #[serde(default = "default_latency")]
    pub latency_ms: (u64, u64),
    /// Environment tick period, in milliseconds.
    #[serde(default = "default_tick")]
    pub tick_ms: u64,
}

fn default_latency() -> (u64, u64) {
    (500, 3000)
}

fn default_tick() -> u64 {
    1000
}

impl SessionConfig {
    /// Simulated human (`user`) and an agent of `variant`, with the usual limits.
    pub fn simulated(task_id: &str, instance_id: &str, variant: AgentVariant) -> Self {
        Self::with_team(
            task_id,
            instance_id,
            vec![
                PartyConfig {
                    role: Role::user(),
                    kind: PartyKind::Human,
                    policy: PartyPolicy::SimulatedHuman,
                },
                PartyConfig {
                    role: Role::agent(),
                    kind: PartyKind::Agent,
                    policy: PartyPolicy::Agent { variant },
                },
            ],
        )
    }

    pub fn with_team(task_id: &str, instance_id: &str, team: Vec<PartyConfig>) -> Self {
        Self {
            task_id: task_id.into(),
            instance_id: instance_id.into(),
            team,
            mode: InteractionMode::NonTurnTaking,
            step_limit: 30,
            count_human_actions: false,
            idle_threshold_secs: 10.0,
            wall_clock_limit_secs: 1800,
            seed: 0,
            bus: BusKind::InProcess,
            backend: BackendKind::Scripted,
            backend_path: None,
            first_turn: None,
            latency_ms: default_latency(),
            tick_ms: default_tick(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.into()));
        self.team()?;
        if self.step_limit == 0 {
            return bad("step_limit must be at least 1");
        }
        if !(self.idle_threshold_secs > 0.0) {
            return bad("idle threshold must be positive");
        }
        if self.wall_clock_limit_secs == 0 {
            return bad("wall-clock limit must be positive");
        }
        if self.tick_ms == 0 || self.latency_ms.0 > self.latency_ms.1 {
            return bad("tick period must be positive and latency bounds ordered");
        }
        if self.mode == InteractionMode::TurnTaking && self.team.len() != 2 {
            return bad("turn-taking needs exactly two parties");
        }
        if let Some(r) = &self.first_turn {
            if !self.team.iter().any(|p| &p.role == r) {
                return bad("first_turn names a role outside the team");
            }
        }
        for p in &self.team {
            let ok = match (&p.policy, p.kind) {
                (PartyPolicy::Agent { .. }, k) => k == PartyKind::Agent,
                (PartyPolicy::SimulatedHuman | PartyPolicy::LiveHuman, k) => k == PartyKind::Human,
                (PartyPolicy::Scripted { .. }, _) => true,
            };
            if !ok {
                return Err(HarnessError::Config(format!(
                    "role {} has policy {} but kind {:?}",
                    p.role,
                    p.policy.name(),
                    p.kind
                )));
            }
        }
        Ok(())
    }

    pub fn team(&self) -> Result<Team, HarnessError> {
        Ok(Team::new(
            self.team
                .iter()
                .map(|p| TeamMember { role: p.role.clone(), kind: p.kind })
                .collect(),
        )?)
    }

    pub fn budget(&self) -> StepBudget {
        StepBudget {
            count_human_actions: self.count_human_actions,
            ..StepBudget::new(self.step_limit)
        }
    }

    pub fn coordinator_config(&self) -> CoordinatorConfig {
        CoordinatorConfig {
            idle_threshold_ms: (self.idle_threshold_secs * 1000.0).round() as u64,
            mode: self.mode,
            first_turn: self.first_turn.clone(),
            ..CoordinatorConfig::default()
        }
    }

    pub fn wall_clock_limit_ms(&self) -> u64 {
        self.wall_clock_limit_secs.saturating_mul(1000)
    }
}
