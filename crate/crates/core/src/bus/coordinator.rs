use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::message::{
    ActionRecord, Channel, ChatMessage, EndNotice, EndReason, EventKind, Notification, Outbound,
    Payload, StepMessage,
};
use crate::env::{
    EnvError, Environment, Role, SEND_TEAMMATE_MESSAGE, WAIT_TEAMMATE_CONTINUE, FINISH,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InteractionMode {
    #[default]
    NonTurnTaking,
    /// Strict alternation; no idle broadcasts.
    TurnTaking,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordinatorConfig {
    pub idle_threshold_ms: u64,
    /// Whether an idle broadcast restarts the idle timer. Off by default:
    /// only step activity resets it, so every over-threshold tick broadcasts.
    pub reset_idle_on_broadcast: bool,
    pub mode: InteractionMode,
    /// First party to move in turn-taking mode; defaults to the first team member.
    #[serde(default)]
    pub first_turn: Option<Role>,
}

impl Default for CoordinatorConfig {
    fn default() -> Self {
        Self {
            idle_threshold_ms: 10_000,
            reset_idle_on_broadcast: false,
            mode: InteractionMode::NonTurnTaking,
            first_turn: None,
        }
    }
}

/// Result of handling one `step` message, as recorded in trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum StepOutcome {
    Applied {
        private: bool,
        counted: bool,
        done: bool,
        reward: f64,
    },
    Message {
        counted: bool,
        done: bool,
    },
    Wait,
    Rejected {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Handled {
    pub outcome: StepOutcome,
    pub outbound: Vec<Outbound>,
}

/// The environment-side event handler: owns the environment, the chat
/// history and the idle timer, and turns step/tick input into routed
/// notifications.
pub struct Coordinator {
    env: Environment,
    config: CoordinatorConfig,
    chat: Vec<ChatMessage>,
    actions: Vec<ActionRecord>,
    last_step_ms: u64,
    turn: Option<Role>,
    pending: BTreeMap<Role, EventKind>,
    ended: Option<EndReason>,
}

impl Coordinator {
    pub fn new(env: Environment, config: CoordinatorConfig, now: u64) -> Self {
        let turn = match config.mode {
            InteractionMode::NonTurnTaking => None,
            InteractionMode::TurnTaking => config
                .first_turn
                .clone()
                .or_else(|| env.team().roles().next().cloned()),
        };
        Self {
            env,
            config,
            chat: Vec::new(),
            actions: Vec::new(),
            last_step_ms: now,
            turn,
            pending: BTreeMap::new(),
            ended: None,
        }
    }

    pub fn env(&self) -> &Environment {
        &self.env
    }

    pub fn config(&self) -> &CoordinatorConfig {
        &self.config
    }

    pub fn chat(&self) -> &[ChatMessage] {
        &self.chat
    }

    pub fn turn(&self) -> Option<&Role> {
        self.turn.as_ref()
    }

    pub fn ended(&self) -> Option<&EndReason> {
        self.ended.as_ref()
    }

    pub fn last_step_ms(&self) -> u64 {
        self.last_step_ms
    }

    fn roles(&self) -> Vec<Role> {
        self.env.team().roles().cloned().collect()
    }

    /// Current snapshot for `role`, tagged with its pending event kind.
    pub fn get_payload(&self, role: &Role, now: u64) -> Result<Payload, EnvError> {
        let kind = self.pending.get(role).copied().unwrap_or(EventKind::SharedUpdate);
        self.build_payload(role, kind, now, None)
    }

    fn build_payload(
        &self,
        role: &Role,
        kind: EventKind,
        now: u64,
        error: Option<String>,
    ) -> Result<Payload, EnvError> {
        let observation = self.env.observation_view(role)?;
        let actions = self
            .actions
            .iter()
            .filter(|a| &a.role == role || !a.private)
            .cloned()
            .collect();
        Ok(Payload {
            kind,
            role: role.clone(),
            observation,
            chat: self.chat.clone(),
            actions,
            timestamp: now,
            turn: self.turn.clone(),
            error,
        })
    }

    fn notify(&mut self, role: &Role, kind: EventKind, now: u64) -> Outbound {
        self.notify_with(role, kind, now, None)
    }

    fn notify_with(
        &mut self,
        role: &Role,
        kind: EventKind,
        now: u64,
        error: Option<String>,
    ) -> Outbound {
        self.pending.insert(role.clone(), kind);
        let payload = self
            .build_payload(role, kind, now, error)
            .expect("team roles always have a view");
        Outbound {
            channel: Channel::obs(role),
            notification: Notification::Payload(payload),
        }
    }

    fn broadcast(&mut self, kind: EventKind, now: u64) -> Vec<Outbound> {
        self.roles()
            .iter()
            .map(|r| self.notify(r, kind, now))
            .collect()
    }

    /// Snapshots sent to every member when the session opens.
    pub fn initial_notifications(&mut self, now: u64) -> Vec<Outbound> {
        self.broadcast(EventKind::SharedUpdate, now)
    }

    /// Ends the session from outside (wall-clock limit, abort).
    pub fn end(&mut self, reason: EndReason, now: u64) -> Vec<Outbound> {
        if self.ended.is_some() {
            return Vec::new();
        }
        self.ended = Some(reason.clone());
        vec![Outbound {
            channel: Channel::End,
            notification: Notification::End(EndNotice {
                reason,
                timestamp: now,
                final_digest: self.env.state().digest(),
            }),
        }]
    }

    fn reject(&mut self, role: &Role, reason: String, now: u64) -> Handled {
        let outbound = if self.env.team().contains(role) {
            vec![self.notify_with(role, EventKind::Error, now, Some(reason.clone()))]
        } else {
            Vec::new()
        };
        Handled {
            outcome: StepOutcome::Rejected { reason },
            outbound,
        }
    }

    fn advance_turn(&mut self) -> Option<Role> {
        let current = self.turn.as_ref()?;
        let roles = self.roles();
        let idx = roles.iter().position(|r| r == current).unwrap_or(0);
        let next = roles[(idx + 1) % roles.len()].clone();
        self.turn = Some(next.clone());
        Some(next)
    }

    pub fn handle_step_event(&mut self, msg: &StepMessage, now: u64) -> Handled {
        let role = &msg.role;
        if self.ended.is_some() {
            return Handled {
                outcome: StepOutcome::Rejected {
                    reason: "session ended".into(),
                },
                outbound: Vec::new(),
            };
        }
        if !self.env.team().contains(role) {
            return self.reject(role, format!("role {role} is not part of the team"), now);
        }
        if let Some(turn) = &self.turn {
            if turn != role {
                return self.reject(role, format!("out of turn: it is {turn}'s turn"), now);
            }
        }
        self.last_step_ms = now;

        let parsed = match self.env.grammar().parse(&msg.action) {
            Ok(p) => p,
            Err(e) => return self.reject(role, e.to_string(), now),
        };

        match parsed.name.as_str() {
            SEND_TEAMMATE_MESSAGE => {
                let text = parsed.arg("message").unwrap_or_default().to_string();
                let (counted, done) = match self.env.charge_message(role) {
                    Ok(r) => r,
                    Err(e) => return self.reject(role, e.to_string(), now),
                };
                self.chat.push(ChatMessage {
                    sender: role.clone(),
                    text,
                    timestamp: now,
                });
                let outbound = if done {
                    self.end(EndReason::StepLimit, now)
                } else {
                    self.advance_turn();
                    self.broadcast(EventKind::NewMessage, now)
                };
                Handled {
                    outcome: StepOutcome::Message { counted, done },
                    outbound,
                }
            }
            WAIT_TEAMMATE_CONTINUE => {
                let outbound = match self.advance_turn() {
                    Some(next) => vec![self.notify(&next, EventKind::TurnPassed, now)],
                    None => Vec::new(),
                };
                Handled {
                    outcome: StepOutcome::Wait,
                    outbound,
                }
            }
            _ => {
                let result = match self.env.step(role, &parsed) {
                    Ok(r) => r,
                    Err(e) => return self.reject(role, e.to_string(), now),
                };
                self.actions.push(ActionRecord {
                    role: role.clone(),
                    action: msg.action.clone(),
                    private: result.private,
                    timestamp: now,
                });
                let outcome = StepOutcome::Applied {
                    private: result.private,
                    counted: result.counted,
                    done: result.done,
                    reward: result.reward,
                };
                let outbound = if result.done {
                    let reason = if parsed.name == FINISH {
                        EndReason::Finished
                    } else {
                        EndReason::StepLimit
                    };
                    self.end(reason, now)
                } else if result.private {
                    let mut out = vec![self.notify(role, EventKind::PrivateUpdate, now)];
                    if let Some(next) = self.advance_turn() {
                        if &next != role {
                            out.push(self.notify(&next, EventKind::TurnPassed, now));
                        }
                    }
                    out
                } else {
                    self.advance_turn();
                    self.broadcast(EventKind::SharedUpdate, now)
                };
                Handled { outcome, outbound }
            }
        }
    }

    /// Periodic tick: broadcasts to everyone once inactivity reaches the threshold.
    pub fn handle_tick(&mut self, now: u64) -> Vec<Outbound> {
        if self.ended.is_some() || self.config.mode == InteractionMode::TurnTaking {
            return Vec::new();
        }
        if now.saturating_sub(self.last_step_ms) < self.config.idle_threshold_ms {
            return Vec::new();
        }
        if self.config.reset_idle_on_broadcast {
            self.last_step_ms = now;
        }
        self.broadcast(EventKind::IdleTick, now)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{DeclarativeEnv, StepBudget, TaskInstance, Team};

    const TOY: &str = r#"{
      "spec": {
        "task_id": "toy",
        "task_description": "toy",
        "action_specs": [
          {"name": "EDITOR_UPDATE", "parameters": [{"name": "text", "kind": "text"}],
           "pattern": "(?s)^EDITOR_UPDATE\\(text=(.*)\\)$", "description": ""},
          {"name": "SEARCH", "parameters": [{"name": "q", "kind": "text"}],
           "pattern": "(?s)^SEARCH\\(q=(.*)\\)$", "description": ""},
          {"name": "FINISH", "parameters": [], "pattern": "^FINISH\\(\\)$", "description": ""}
        ],
        "observation_schema": [
          {"name": "editor", "visibility": "public"},
          {"name": "search_window", "visibility": "private"}
        ],
        "step_limit": 30
      },
      "effects": {
        "EDITOR_UPDATE": [{"component": "editor", "op": "set", "template": "{text}"}],
        "SEARCH": [{"component": "search_window", "op": "set", "template": "results for {q}"}]
      }
    }"#;

    fn coordinator(config: CoordinatorConfig) -> Coordinator {
        let logic = DeclarativeEnv::from_json(TOY).unwrap();
        let inst = TaskInstance {
            task_id: "toy".into(),
            ..Default::default()
        };
        let (env, _) =
            Environment::reset(Box::new(logic), &inst, Team::pair(), StepBudget::new(30)).unwrap();
        Coordinator::new(env, config, 0)
    }

    fn step(c: &mut Coordinator, role: Role, action: &str, now: u64) -> Handled {
        c.handle_step_event(
            &StepMessage {
                role,
                action: action.into(),
            },
            now,
        )
    }

    fn channels(h: &Handled) -> Vec<String> {
        h.outbound.iter().map(|o| o.channel.name()).collect()
    }

    #[test]
    fn wait_emits_nothing() {
        let mut c = coordinator(CoordinatorConfig::default());
        let h = step(&mut c, Role::agent(), "WAIT_TEAMMATE_CONTINUE()", 5);
        assert_eq!(h.outcome, StepOutcome::Wait);
        assert!(h.outbound.is_empty());
        assert_eq!(c.last_step_ms(), 5);
    }

    #[test]
    fn shared_update_reaches_everyone_including_actor() {
        let mut c = coordinator(CoordinatorConfig::default());
        let h = step(&mut c, Role::agent(), "EDITOR_UPDATE(text=Day 1)", 1);
        assert_eq!(channels(&h), ["user/obs", "agent/obs"]);
        assert!(h.outbound.iter().all(|o| o.kind() == Some(EventKind::SharedUpdate)));
    }

    #[test]
    fn private_update_reaches_only_actor() {
        let mut c = coordinator(CoordinatorConfig::default());
        let h = step(&mut c, Role::agent(), "SEARCH(q=flights)", 1);
        assert_eq!(channels(&h), ["agent/obs"]);
        assert_eq!(h.outbound[0].kind(), Some(EventKind::PrivateUpdate));
    }

    #[test]
    fn message_notifies_all_and_appends_chat() {
        let mut c = coordinator(CoordinatorConfig::default());
        let h = step(&mut c, Role::user(), "SEND_TEAMMATE_MESSAGE(message=hi)", 3);
        assert_eq!(channels(&h), ["user/obs", "agent/obs"]);
        for r in [Role::user(), Role::agent()] {
            assert_eq!(c.get_payload(&r, 4).unwrap().chat.len(), 1);
        }
    }

    #[test]
    fn finish_emits_single_end() {
        let mut c = coordinator(CoordinatorConfig::default());
        let h = step(&mut c, Role::user(), "FINISH()", 3);
        assert_eq!(channels(&h), ["end"]);
        let again = step(&mut c, Role::agent(), "EDITOR_UPDATE(text=x)", 4);
        assert!(again.outbound.is_empty());
        assert!(matches!(again.outcome, StepOutcome::Rejected { .. }));
    }

    #[test]
    fn malformed_action_notifies_sender_only() {
        let mut c = coordinator(CoordinatorConfig::default());
        let h = step(&mut c, Role::agent(), "FLY_TO_MOON()", 3);
        assert_eq!(channels(&h), ["agent/obs"]);
        assert_eq!(h.outbound[0].kind(), Some(EventKind::Error));
    }

    #[test]
    fn idle_threshold() {
        let mut c = coordinator(CoordinatorConfig::default());
        assert!(c.handle_tick(5_000).is_empty());
        assert_eq!(c.handle_tick(10_000).len(), 2);
        // No activity in between: the timer was not reset by the broadcast.
        assert_eq!(c.handle_tick(11_000).len(), 2);
        step(&mut c, Role::agent(), "WAIT_TEAMMATE_CONTINUE()", 12_000);
        assert!(c.handle_tick(13_000).is_empty());
    }

    #[test]
    fn reset_on_broadcast_option() {
        let mut c = coordinator(CoordinatorConfig {
            reset_idle_on_broadcast: true,
            ..Default::default()
        });
        assert_eq!(c.handle_tick(10_000).len(), 2);
        assert!(c.handle_tick(11_000).is_empty());
    }

    #[test]
    fn payload_observation_matches_view() {
        let mut c = coordinator(CoordinatorConfig::default());
        step(&mut c, Role::agent(), "SEARCH(q=x)", 1);
        for r in [Role::agent(), Role::user()] {
            let p = c.get_payload(&r, 2).unwrap();
            assert_eq!(p.observation, c.env().observation_view(&r).unwrap());
        }
        let user = c.get_payload(&Role::user(), 2).unwrap();
        assert!(user.actions.is_empty(), "private actions stay private");
    }

    #[test]
    fn turn_taking_alternates() {
        let mut c = coordinator(CoordinatorConfig {
            mode: InteractionMode::TurnTaking,
            ..Default::default()
        });
        assert_eq!(c.turn(), Some(&Role::user()));
        let h = step(&mut c, Role::agent(), "EDITOR_UPDATE(text=a)", 1);
        assert!(matches!(h.outcome, StepOutcome::Rejected { .. }));
        assert_eq!(channels(&h), ["agent/obs"]);
        let h = step(&mut c, Role::user(), "WAIT_TEAMMATE_CONTINUE()", 2);
        assert_eq!(h.outcome, StepOutcome::Wait);
        assert_eq!(channels(&h), ["agent/obs"]);
        assert_eq!(c.turn(), Some(&Role::agent()));
        assert!(c.handle_tick(60_000).is_empty());
    }
}
