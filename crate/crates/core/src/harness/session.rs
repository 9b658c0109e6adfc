use std::path::Path;

use super::trajectory::{notices, EventBody, RatingRecord, Recorder, TrajectoryFooter, TrajectoryHeader, FORMAT_VERSION};
use super::{HarnessError, SessionConfig, TrajectoryRecord};
use crate::bus::{Coordinator, EndReason, Handled, Outbound, Payload, StepMessage, StepOutcome};
use crate::env::{ComponentState, Role, TaskInstance};
use crate::eval::{evaluate, ChecklistScorer, InitiativeJudge, Outcome, RuleBasedJudge, TaskScorer};
use crate::tasks::TaskRegistry;

/// Judge and scorer applied when a session is finalized.
pub struct Evaluator {
    pub judge: Box<dyn InitiativeJudge>,
    pub scorer: Box<dyn TaskScorer>,
}

impl Default for Evaluator {
    fn default() -> Self {
        Self { judge: Box::new(RuleBasedJudge), scorer: Box::new(ChecklistScorer) }
    }
}

/// One running session: the coordinator plus its trajectory recorder.
/// Every input goes through here so that what is recorded is exactly what
/// the environment saw.
pub struct LiveSession {
    instance: TaskInstance,
    coord: Coordinator,
    recorder: Recorder,
    ratings: Vec<RatingRecord>,
    annotations: Vec<String>,
    failure: Option<String>,
    wall_clock_limit_ms: u64,
}

impl LiveSession {
    pub fn new(config: SessionConfig, registry: &TaskRegistry) -> Result<Self, HarnessError> {
        config.validate()?;
        let instance = registry.instance(&config.task_id, &config.instance_id)?;
        let team = config.team()?;
        let (env, _) = registry.reset(&instance, team.clone(), config.budget())?;
        let header = TrajectoryHeader {
            format_version: FORMAT_VERSION,
            initial_digest: env.state().digest(),
            team,
            config: config.clone(),
        };
        Ok(Self {
            instance,
            coord: Coordinator::new(env, config.coordinator_config(), 0),
            recorder: Recorder::new(header),
            ratings: Vec::new(),
            annotations: Vec::new(),
            failure: None,
            wall_clock_limit_ms: config.wall_clock_limit_ms(),
        })
    }

    /// Streams the trajectory to `path` as events happen.
    pub fn stream_to(mut self, path: &Path) -> Result<Self, HarnessError> {
        self.recorder = self.recorder.stream_to(path)?;
        Ok(self)
    }

    pub fn config(&self) -> &SessionConfig {
        &self.recorder.header().config
    }

    pub fn instance(&self) -> &TaskInstance {
        &self.instance
    }

    pub fn coordinator(&self) -> &Coordinator {
        &self.coord
    }

    pub fn ended(&self) -> Option<&EndReason> {
        self.coord.ended()
    }

    fn record(&mut self, t_ms: u64, body: EventBody) -> Result<(), HarnessError> {
        let digest = self.coord.env().state().digest();
        self.recorder.append(t_ms, body, digest)?;
        Ok(())
    }

    /// Opening snapshots for every member.
    pub fn start(&mut self, now: u64) -> Result<Vec<Outbound>, HarnessError> {
        let out = self.coord.initial_notifications(now);
        self.record(now, EventBody::Start { notified: notices(&out) })?;
        Ok(out)
    }

    pub fn submit(&mut self, msg: &StepMessage, now: u64) -> Result<Handled, HarnessError> {
        if self.coord.ended().is_some() {
            return Ok(Handled {
                outcome: StepOutcome::Rejected { reason: "session ended".into() },
                outbound: Vec::new(),
            });
        }
        let h = self.coord.handle_step_event(msg, now);
        self.record(
            now,
            EventBody::Step {
                role: msg.role.clone(),
                action: msg.action.clone(),
                outcome: h.outcome.clone(),
                notified: notices(&h.outbound),
            },
        )?;
        Ok(h)
    }

    /// Periodic tick; also enforces the wall-clock limit.
    pub fn tick(&mut self, now: u64) -> Result<Vec<Outbound>, HarnessError> {
        if self.coord.ended().is_some() {
            return Ok(Vec::new());
        }
        if now >= self.wall_clock_limit_ms {
            return self.end(EndReason::WallClock, now);
        }
        let out = self.coord.handle_tick(now);
        if !out.is_empty() {
            self.record(now, EventBody::Tick { notified: notices(&out) })?;
        }
        Ok(out)
    }

    pub fn end(&mut self, reason: EndReason, now: u64) -> Result<Vec<Outbound>, HarnessError> {
        let out = self.coord.end(reason.clone(), now);
        if !out.is_empty() {
            self.record(now, EventBody::End { reason, notified: notices(&out) })?;
        }
        Ok(out)
    }

    /// Marks an infrastructure failure and aborts the session.
    pub fn fail(&mut self, message: &str, now: u64) -> Result<Vec<Outbound>, HarnessError> {
        self.failure.get_or_insert_with(|| message.to_string());
        self.end(EndReason::Aborted(message.into()), now)
    }

    pub fn payload(&self, role: &Role, now: u64) -> Result<Payload, HarnessError> {
        Ok(self.coord.get_payload(role, now)?)
    }

    pub fn rate(&mut self, rating: RatingRecord) -> Result<(), HarnessError> {
        rating.validate()?;
        if !self.coord.env().team().contains(&rating.role) {
            return Err(HarnessError::Config(format!("{} is not in this session", rating.role)));
        }
        self.ratings.retain(|r| r.role != rating.role);
        self.ratings.push(rating);
        Ok(())
    }

    pub fn annotate(&mut self, tag: &str) {
        self.annotations.push(tag.into());
    }

    pub fn outcome(&self) -> Outcome {
        let state = self.coord.env().state();
        let components = state
            .components
            .names()
            .filter_map(|n| match state.components.get(n) {
                Some(ComponentState::Shared(v)) => Some((n.clone(), v.clone())),
                _ => None,
            })
            .collect();
        let cfg = self.config();
        let human_rating = self.ratings.iter().find(|r| r.outcome.is_some() || r.satisfaction.is_some());
        Outcome {
            task_id: cfg.task_id.clone(),
            instance_id: cfg.instance_id.clone(),
            parties: self.coord.env().team().roles().cloned().collect(),
            components,
            chat: self.coord.chat().to_vec(),
            outcome_rating: human_rating.and_then(|r| r.outcome),
            satisfaction: human_rating.and_then(|r| r.satisfaction),
        }
    }

    /// Ends the session if it is still open, computes metrics and closes
    /// the record.
    pub fn finish(mut self, now: u64, evaluator: &Evaluator) -> Result<TrajectoryRecord, HarnessError> {
        if self.coord.ended().is_none() {
            self.end(EndReason::Aborted("finished while open".into()), now)?;
        }
        let outcome = self.outcome();
        let metrics = match evaluate::<f64>(&outcome, &self.instance, evaluator.judge.as_ref(), evaluator.scorer.as_ref()) {
            Ok(m) => Some(m),
            Err(e) => {
                log::warn!("metrics unavailable: {e}");
                None
            }
        };
        let state = self.coord.env().state().clone();
        let footer = TrajectoryFooter {
            end_reason: self.coord.ended().cloned().expect("ended above"),
            final_digest: state.digest(),
            final_state: state,
            outcome,
            metrics,
            ratings: self.ratings,
            annotations: self.annotations,
            failure: self.failure,
        };
        self.recorder.finish(footer)
    }
}
