use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::backend::{Backend, DecodingParams, Prompt};
use super::context::{render_action_space, DecisionContext};
use super::node::{Decision, Policy, PolicyError};
use super::{labelled, prompts};
use crate::env::{
    send_message_action, wait_action, Grammar, FINISH, SEND_TEAMMATE_MESSAGE,
    WAIT_TEAMMATE_CONTINUE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HumanActionType {
    AnswerQuestion,
    ProvideFeedback,
    TakeTaskAction,
    DoNothing,
    Finish,
}

impl HumanActionType {
    pub fn parse(s: &str) -> Option<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphabetic())
            .collect::<String>()
            .to_ascii_lowercase();
        Some(match key.as_str() {
            "answerquestion" => Self::AnswerQuestion,
            "providefeedback" => Self::ProvideFeedback,
            "taketaskaction" => Self::TakeTaskAction,
            "donothing" => Self::DoNothing,
            "finish" => Self::Finish,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HumanAction {
    pub kind: HumanActionType,
    /// The wire action string it resolves to.
    pub action: String,
}

impl HumanAction {
    fn nothing() -> Self {
        Self {
            kind: HumanActionType::DoNothing,
            action: wait_action(),
        }
    }
}

/// Language-model stand-in for a human teammate who holds the instance's
/// hidden information.
pub struct SimulatedHuman {
    name: String,
    backend: Arc<dyn Backend>,
    params: DecodingParams,
    /// Wait for the agent to start instead of consulting the backend on a
    /// fresh session.
    pub passive_start: bool,
}

impl SimulatedHuman {
    pub fn new(name: &str, backend: Arc<dyn Backend>) -> Self {
        Self {
            name: name.into(),
            backend,
            params: DecodingParams::default(),
            passive_start: true,
        }
    }

    pub fn prompt(&self, ctx: &DecisionContext) -> Result<Prompt, PolicyError> {
        let hidden = ctx
            .hidden_info()
            .iter()
            .map(|h| format!("- {h}"))
            .collect::<Vec<_>>()
            .join("\n");
        let mut system = prompts::render(
            prompts::SIMULATED_HUMAN,
            &[
                ("name", &self.name),
                ("task_description", &ctx.task_description),
                ("observation", &ctx.observation.render_text()),
                ("chat_history", &ctx.render_chat()),
                ("action_history", &ctx.render_actions()),
                ("hidden_info", &hidden),
                ("action_space", &render_action_space(&ctx.task_actions)),
            ],
        )?;
        if let Some(q) = ctx.pending_question() {
            system.push_str(&prompts::render(prompts::PENDING_QUESTION, &[("question", &q.text)])?);
        }
        Ok(Prompt::new(system, "What do you do next?"))
    }

    /// Picks one of the five action types and resolves it to a wire action.
    pub fn decide_action(&self, ctx: &DecisionContext) -> Result<HumanAction, PolicyError> {
        let fresh = ctx.chat_history.is_empty() && ctx.action_history.is_empty();
        if self.passive_start && fresh {
            return Ok(HumanAction::nothing());
        }
        let out = self.backend.complete(&self.prompt(ctx)?, &self.params)?;
        Ok(resolve(&out, ctx))
    }
}

fn resolve(output: &str, ctx: &DecisionContext) -> HumanAction {
    let kind = labelled(output, "Action type:")
        .and_then(|k| HumanActionType::parse(k.lines().next().unwrap_or_default()));
    let body = labelled(output, "Action:").unwrap_or_default();
    let Some(kind) = kind else {
        log::warn!("simulated human output has no action type; doing nothing");
        return HumanAction::nothing();
    };
    let action = match kind {
        HumanActionType::AnswerQuestion | HumanActionType::ProvideFeedback => {
            let text = body
                .strip_prefix(&format!("{SEND_TEAMMATE_MESSAGE}(message="))
                .and_then(|s| s.strip_suffix(')'))
                .unwrap_or(&body)
                .trim()
                .to_string();
            if text.is_empty() {
                return HumanAction::nothing();
            }
            send_message_action(&text)
        }
        HumanActionType::TakeTaskAction => {
            let grammar = match Grammar::new(ctx.task_actions.clone()) {
                Ok(g) => g,
                Err(_) => return HumanAction::nothing(),
            };
            match grammar.parse(&body) {
                Ok(a) => a.render(),
                Err(e) => {
                    log::warn!("simulated human produced an invalid task action: {e}");
                    return HumanAction::nothing();
                }
            }
        }
        HumanActionType::DoNothing => wait_action(),
        HumanActionType::Finish => format!("{FINISH}()"),
    };
    HumanAction { kind, action }
}

impl Policy for SimulatedHuman {
    fn name(&self) -> &str {
        "simulated_human"
    }

    fn decide(&mut self, ctx: &DecisionContext) -> Result<Decision, PolicyError> {
        let a = self.decide_action(ctx)?;
        debug_assert!(a.kind != HumanActionType::DoNothing || a.action.starts_with(WAIT_TEAMMATE_CONTINUE));
        Ok(Decision::Act(a.action))
    }
}
