//! Language-model agents: fully autonomous, collaborative, and
//! collaborative with situational planning. All three keep a scratchpad
//! that is refreshed on every notification they process.

mod scratchpad;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use scratchpad::{Scratchpad, ScratchpadOp, DEFAULT_CAPACITY};

use crate::env::{
    collaboration_specs, send_message_action, wait_action, ActionSpec, Grammar, SEND_TEAMMATE_MESSAGE,
};
use crate::nodes::{
    labelled, prompts, render_action_space, Backend, Decision, DecisionContext, DecodingParams,
    Policy, PolicyError, Prompt,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentVariant {
    Autonomous,
    Collaborative,
    SituationalPlanning,
}

impl AgentVariant {
    pub const ALL: [AgentVariant; 3] = [Self::Autonomous, Self::Collaborative, Self::SituationalPlanning];

    pub fn name(self) -> &'static str {
        match self {
            Self::Autonomous => "autonomous",
            Self::Collaborative => "collaborative",
            Self::SituationalPlanning => "situational_planning",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanKind {
    SendMessage,
    TakeTaskAction,
    DoNothing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SituationalPlan {
    pub kind: PlanKind,
    pub thought: String,
}

impl SituationalPlan {
    /// Reads a `Thought: ...` / `Plan: ...` completion. The plan may be given
    /// by number or by phrase; anything unrecognised means doing nothing.
    pub fn parse(output: &str) -> Self {
        let thought = labelled(output, "Thought:")
            .map(|t| {
                t.lines()
                    .take_while(|l| !l.trim_start().to_lowercase().starts_with("plan:"))
                    .collect::<Vec<_>>()
                    .join("\n")
                    .trim()
                    .to_string()
            })
            .unwrap_or_default();
        let kind = labelled(output, "Plan:")
            .and_then(|p| plan_kind(p.lines().next().unwrap_or_default()))
            .unwrap_or_else(|| {
                log::warn!("unparseable plan, doing nothing: {output:?}");
                PlanKind::DoNothing
            });
        Self { kind, thought }
    }
}

fn plan_kind(line: &str) -> Option<PlanKind> {
    let l = line.trim().trim_start_matches(['<', '*', '"', '\'']).to_lowercase();
    match l.chars().next() {
        Some('1') => return Some(PlanKind::SendMessage),
        Some('2') => return Some(PlanKind::TakeTaskAction),
        Some('3') => return Some(PlanKind::DoNothing),
        _ => {}
    }
    [
        ("send a message", PlanKind::SendMessage),
        ("take a task action", PlanKind::TakeTaskAction),
        ("do nothing", PlanKind::DoNothing),
    ]
    .into_iter()
    .find(|(phrase, _)| l.contains(phrase))
    .map(|(_, k)| k)
}

/// Pulls the action string out of a `Thought:` / `Action:` completion.
fn extract_action(output: &str) -> Option<String> {
    let raw = labelled(output, "Action:")?;
    let raw = raw.trim().trim_matches('`').trim();
    (!raw.is_empty()).then(|| raw.to_string())
}

fn extract_message(output: &str) -> Option<String> {
    let raw = labelled(output, "Message:")?;
    let raw = raw.trim().trim_matches('"').trim();
    (!raw.is_empty()).then(|| raw.to_string())
}

pub struct LmAgent {
    variant: AgentVariant,
    name: String,
    backend: Arc<dyn Backend>,
    params: DecodingParams,
    scratchpad: Scratchpad,
    /// Completions that never produced a valid action and fell back to waiting.
    fallbacks: u32,
}

impl LmAgent {
    pub fn new(variant: AgentVariant, name: &str, backend: Arc<dyn Backend>) -> Self {
        Self {
            variant,
            name: name.into(),
            backend,
            params: DecodingParams::default(),
            scratchpad: Scratchpad::default(),
            fallbacks: 0,
        }
    }

    pub fn with_params(mut self, params: DecodingParams) -> Self {
        self.params = params;
        self
    }

    pub fn with_scratchpad(mut self, scratchpad: Scratchpad) -> Self {
        self.scratchpad = scratchpad;
        self
    }

    pub fn variant(&self) -> AgentVariant {
        self.variant
    }

    pub fn scratchpad(&self) -> &Scratchpad {
        &self.scratchpad
    }

    pub fn fallbacks(&self) -> u32 {
        self.fallbacks
    }

    pub fn system_prompt(&self, ctx: &DecisionContext) -> Result<String, PolicyError> {
        let scratchpad = self.scratchpad.render();
        let observation = ctx.observation.render_text();
        let rendered = match self.variant {
            AgentVariant::Autonomous => prompts::render(
                prompts::AUTONOMOUS_SYSTEM,
                &[
                    ("name", &self.name),
                    ("task_description", &ctx.task_description),
                    ("scratchpad", &scratchpad),
                    ("observation", &observation),
                ],
            )?,
            _ => prompts::render(
                prompts::AGENT_SYSTEM,
                &[
                    ("name", &self.name),
                    ("team_members", &ctx.team_members()),
                    ("task_description", &ctx.task_description),
                    ("scratchpad", &scratchpad),
                    ("observation", &observation),
                    ("chat_history", &ctx.render_chat()),
                ],
            )?,
        };
        Ok(rendered)
    }

    fn ask(&self, ctx: &DecisionContext, user: String) -> Result<String, PolicyError> {
        let mut user = user;
        if let Some(err) = &ctx.error {
            user.push_str(&format!("\n\nYour last submission was rejected: {err}"));
        }
        let prompt = Prompt::new(self.system_prompt(ctx)?, user);
        Ok(self.backend.complete(&prompt, &self.params)?)
    }

    /// Asks for a scratchpad operation and applies it. Backend failures and
    /// unusable output leave the scratchpad as it was.
    pub fn update_scratchpad(&mut self, ctx: &DecisionContext) -> ScratchpadOp {
        let op = match self.ask(ctx, prompts::SCRATCHPAD_UPDATE.to_string()) {
            Ok(out) => extract_action(&out).and_then(|a| ScratchpadOp::parse(&a)).unwrap_or_else(|| {
                log::warn!("invalid scratchpad operation, ignoring: {out:?}");
                ScratchpadOp::DoNothing
            }),
            Err(e) => {
                log::warn!("scratchpad update skipped: {e}");
                ScratchpadOp::DoNothing
            }
        };
        if let Some((id, _)) = self.scratchpad.apply(&op) {
            log::debug!("scratchpad full, evicted note {id:?}");
        }
        op
    }

    pub fn situational_plan(&self, ctx: &DecisionContext) -> Result<SituationalPlan, PolicyError> {
        let user = prompts::render(
            prompts::SITUATIONAL_PLANNING,
            &[("action_history", &ctx.render_actions())],
        )?;
        Ok(SituationalPlan::parse(&self.ask(ctx, user)?))
    }

    /// Second stage of situational planning: turn a plan into a wire action.
    pub fn generate_action(&mut self, plan: &SituationalPlan, ctx: &DecisionContext) -> Result<String, PolicyError> {
        match plan.kind {
            PlanKind::DoNothing => Err(PolicyError::Precondition(
                "cannot generate an action for a do-nothing plan".into(),
            )),
            PlanKind::TakeTaskAction => self.choose(ctx, ctx.task_actions.clone()),
            PlanKind::SendMessage => {
                let user = prompts::render(
                    prompts::COMPOSE_MESSAGE,
                    &[("action_history", &ctx.render_actions())],
                )?;
                self.with_repair(ctx, user, |out| {
                    extract_message(out)
                        .map(|m| send_message_action(&m))
                        .ok_or_else(|| "no Message: line found".to_string())
                })
            }
        }
    }

    /// Single-stage choice over task actions only.
    pub fn autonomous_decide(&mut self, ctx: &DecisionContext) -> Result<String, PolicyError> {
        self.choose(ctx, ctx.task_actions.clone())
    }

    /// Single-stage choice over task actions plus collaboration acts.
    pub fn collaborative_decide(&mut self, ctx: &DecisionContext) -> Result<String, PolicyError> {
        let mut specs = ctx.task_actions.clone();
        specs.extend(collaboration_specs());
        self.choose(ctx, specs)
    }

    fn choose(&mut self, ctx: &DecisionContext, specs: Vec<ActionSpec>) -> Result<String, PolicyError> {
        let grammar = Grammar::new(specs).map_err(|e| PolicyError::Precondition(e.to_string()))?;
        let user = prompts::render(
            prompts::CHOOSE_ACTION,
            &[
                ("action_history", &ctx.render_actions()),
                ("action_space", &render_action_space(grammar.specs())),
            ],
        )?;
        self.with_repair(ctx, user, |out| {
            let raw = extract_action(out).ok_or_else(|| "no Action: line found".to_string())?;
            grammar.parse(&raw).map(|a| a.render()).map_err(|e| e.to_string())
        })
    }

    /// Runs `user`, validating with `check`; one repair round, then waits.
    fn with_repair(
        &mut self,
        ctx: &DecisionContext,
        user: String,
        check: impl Fn(&str) -> Result<String, String>,
    ) -> Result<String, PolicyError> {
        let first = self.ask(ctx, user.clone())?;
        let error = match check(&first) {
            Ok(a) => return Ok(a),
            Err(e) => e,
        };
        let repair = prompts::render(prompts::REPAIR, &[("previous", &first), ("error", &error)])?;
        let second = self.ask(ctx, format!("{user}\n\n{repair}"))?;
        match check(&second) {
            Ok(a) => Ok(a),
            Err(e) => {
                log::warn!("{}: no valid action after repair ({e}); waiting", self.name);
                self.fallbacks += 1;
                Ok(wait_action())
            }
        }
    }
}

impl Policy for LmAgent {
    fn name(&self) -> &str {
        self.variant.name()
    }

    fn decide(&mut self, ctx: &DecisionContext) -> Result<Decision, PolicyError> {
        self.update_scratchpad(ctx);
        let action = match self.variant {
            AgentVariant::Autonomous => self.autonomous_decide(ctx)?,
            AgentVariant::Collaborative => self.collaborative_decide(ctx)?,
            AgentVariant::SituationalPlanning => {
                let plan = self.situational_plan(ctx)?;
                if plan.kind == PlanKind::DoNothing {
                    wait_action()
                } else {
                    self.generate_action(&plan, ctx)?
                }
            }
        };
        debug_assert!(self.variant != AgentVariant::Autonomous || !action.starts_with(SEND_TEAMMATE_MESSAGE));
        Ok(Decision::Act(action))
    }
}
