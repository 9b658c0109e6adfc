use std::collections::VecDeque;
use std::time::Duration;

use thiserror::Error;

use super::backend::BackendError;
use super::context::{DecisionContext, NodeBrief};
use super::prompts::TemplateError;
use crate::bus::{
    decode, encode, BusError, Channel, MessageBus, Payload, StepMessage, Subscription,
};
use crate::env::{wait_action, PartyKind, Role};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Act(String),
    Idle,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl PolicyError {
    fn is_transient(&self) -> bool {
        matches!(self, Self::Backend(e) if e.is_transient())
    }
}

pub trait Policy: Send {
    fn name(&self) -> &str;
    fn decide(&mut self, ctx: &DecisionContext) -> Result<Decision, PolicyError>;
}

/// Replays a fixed list of decisions, one per notification, then idles.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    name: String,
    script: VecDeque<Decision>,
    repeat_last: bool,
}

impl ScriptedPolicy {
    pub fn new(name: &str, script: impl IntoIterator<Item = Decision>) -> Self {
        Self {
            name: name.into(),
            script: script.into_iter().collect(),
            repeat_last: false,
        }
    }

    pub fn acts(name: &str, actions: &[&str]) -> Self {
        Self::new(name, actions.iter().map(|a| Decision::Act(a.to_string())))
    }

    /// Returns the same action on every notification.
    pub fn always(name: &str, action: &str) -> Self {
        Self {
            repeat_last: true,
            ..Self::acts(name, &[action])
        }
    }

    /// Keeps returning the last scripted decision once the rest are used.
    pub fn repeating(mut self) -> Self {
        self.repeat_last = true;
        self
    }
}

impl Policy for ScriptedPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn decide(&mut self, _: &DecisionContext) -> Result<Decision, PolicyError> {
        if self.repeat_last && self.script.len() == 1 {
            return Ok(self.script[0].clone());
        }
        Ok(self.script.pop_front().unwrap_or(Decision::Idle))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    /// Retries after the first failed attempt.
    pub max_retries: u32,
    pub base_backoff: Duration,
    pub sleep: fn(Duration),
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_backoff: Duration::from_millis(250),
            sleep: std::thread::sleep,
        }
    }
}

impl RetryPolicy {
    /// Same retry count, but backoff is not actually slept (logical-clock runs).
    pub fn without_sleep() -> Self {
        Self {
            sleep: |_| {},
            ..Self::default()
        }
    }
}

/// A decision-maker bound to one role of a session.
pub struct TeamNode {
    brief: NodeBrief,
    kind: PartyKind,
    hidden_info: Vec<String>,
    policy: Box<dyn Policy>,
    retry: RetryPolicy,
    fallbacks: u32,
}

impl TeamNode {
    pub fn agent(brief: NodeBrief, policy: Box<dyn Policy>) -> Self {
        Self {
            brief,
            kind: PartyKind::Agent,
            hidden_info: Vec::new(),
            policy,
            retry: RetryPolicy::default(),
            fallbacks: 0,
        }
    }

    pub fn simulated_human(brief: NodeBrief, hidden_info: Vec<String>, policy: Box<dyn Policy>) -> Self {
        Self {
            kind: PartyKind::Human,
            hidden_info,
            ..Self::agent(brief, policy)
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn role(&self) -> &Role {
        &self.brief.role
    }

    pub fn kind(&self) -> PartyKind {
        self.kind
    }

    pub fn policy_name(&self) -> &str {
        self.policy.name()
    }

    /// Times the node gave up on its policy and waited instead.
    pub fn fallbacks(&self) -> u32 {
        self.fallbacks
    }

    pub fn context(&self, payload: &Payload) -> DecisionContext {
        match self.kind {
            PartyKind::Agent => DecisionContext::for_agent(&self.brief, payload),
            PartyKind::Human => {
                DecisionContext::for_simulated_human(&self.brief, payload, &self.hidden_info)
            }
        }
    }

    /// Decides on one notification. Transient backend failures are retried
    /// with exponential backoff; when retries run out the node waits.
    pub fn on_payload(&mut self, payload: &Payload) -> Option<String> {
        let ctx = self.context(payload);
        let mut attempt = 0;
        loop {
            match self.policy.decide(&ctx) {
                Ok(Decision::Act(a)) => return Some(a),
                Ok(Decision::Idle) => return None,
                Err(e) if e.is_transient() && attempt < self.retry.max_retries => {
                    log::debug!("{}: attempt {} failed: {e}", self.brief.role, attempt + 1);
                    (self.retry.sleep)(self.retry.base_backoff * 2u32.pow(attempt));
                    attempt += 1;
                }
                Err(e) => {
                    log::warn!("{}: policy failed, waiting instead: {e}", self.brief.role);
                    self.fallbacks += 1;
                    return Some(wait_action());
                }
            }
        }
    }
}

/// Subscribes to the node's `{role}/obs` and `end` channels. Do this before
/// the session starts publishing.
pub fn subscribe_node(bus: &dyn MessageBus, role: &Role) -> Result<Subscription, BusError> {
    bus.subscribe(&[Channel::obs(role), Channel::End])
}

/// Receives notifications until `end`, publishing each decision on `step`.
/// Queued payloads are collapsed to the newest one before deciding.
/// Returns the published actions in order.
pub fn node_loop(
    node: &mut TeamNode,
    sub: &Subscription,
    bus: &dyn MessageBus,
) -> Result<Vec<String>, BusError> {
    let mut published = Vec::new();
    loop {
        let first = match sub.recv() {
            Ok(d) => d,
            Err(BusError::Disconnected) => return Ok(published),
            Err(e) => return Err(e),
        };
        let mut batch = vec![first];
        batch.extend(sub.drain());
        if batch.iter().any(|d| d.channel == Channel::End.name()) {
            return Ok(published);
        }
        let Some(payload) = latest_payload(&batch) else {
            continue;
        };
        let Some(action) = node.on_payload(&payload) else {
            continue;
        };
        let msg = StepMessage {
            role: node.role().clone(),
            action: action.clone(),
        };
        match bus.publish(&Channel::Step, &encode(&msg)) {
            Ok(_) => published.push(action),
            Err(BusError::SessionClosed) => return Ok(published),
            Err(e) => return Err(e),
        }
    }
}

/// Newest decodable payload in a batch; an error carried by a superseded
/// payload is kept so the policy still learns its submission was rejected.
pub fn latest_payload(batch: &[crate::bus::Delivery]) -> Option<Payload> {
    let payloads: Vec<Payload> = batch
        .iter()
        .filter_map(|d| decode::<Payload>(&d.payload).ok())
        .collect();
    let mut latest = payloads.last()?.clone();
    if latest.error.is_none() {
        latest.error = payloads.iter().rev().find_map(|p| p.error.clone());
    }
    Some(latest)
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Arc;
    use std::thread;
    use std::time::Duration;

    use super::*;
    use crate::bus::{Coordinator, CoordinatorConfig, EndReason, InProcessBus, Outbound};
    use crate::env::{StepBudget, Team};
    use crate::tasks::TaskRegistry;

    fn session() -> (Coordinator, NodeBrief) {
        let reg = TaskRegistry::builtin();
        let inst = reg.instance("travel_planning", "q1").unwrap();
        let spec = reg.spec("travel_planning").unwrap();
        let (env, _) = reg.reset(&inst, Team::pair(), StepBudget::new(30)).unwrap();
        let brief = NodeBrief::new(Role::agent(), &Team::pair(), &spec, &inst);
        (Coordinator::new(env, CoordinatorConfig::default(), 0), brief)
    }

    fn publish(bus: &InProcessBus, out: &[Outbound]) {
        for o in out {
            bus.publish(&o.channel, &o.to_bytes()).unwrap();
        }
    }

    #[test]
    fn loop_publishes_each_decision_and_stops_on_end() {
        let (mut coord, brief) = session();
        let bus = InProcessBus::new();
        let sub = subscribe_node(&bus, &Role::agent()).unwrap();
        let steps = bus.subscribe(&[Channel::Step]).unwrap();
        let script = ["CITY_SEARCH(state=Washington)", "EDITOR_UPDATE(text=Day 1)", "WAIT_TEAMMATE_CONTINUE()"];
        let mut node = TeamNode::agent(brief, Box::new(ScriptedPolicy::acts("s", &script)));
        let worker = {
            let bus = bus.clone();
            thread::spawn(move || node_loop(&mut node, &sub, &bus))
        };
        for expected in script {
            let payload = coord.get_payload(&Role::agent(), 0).unwrap();
            bus.publish(&Channel::obs(&Role::agent()), &encode(&payload)).unwrap();
            let got = steps.recv_timeout(Duration::from_secs(5)).unwrap().expect("step");
            assert_eq!(decode::<StepMessage>(&got.payload).unwrap().action, expected);
        }
        publish(&bus, &coord.end(EndReason::Aborted("test".into()), 1));
        assert_eq!(worker.join().unwrap().unwrap(), script);
    }

    #[test]
    fn superseded_errors_are_kept_on_the_newest_payload() {
        let (coord, _) = session();
        let mut stale = coord.get_payload(&Role::agent(), 0).unwrap();
        stale.error = Some("out of turn".into());
        let fresh = coord.get_payload(&Role::agent(), 5).unwrap();
        let batch: Vec<_> = [stale, fresh]
            .iter()
            .map(|p| crate::bus::Delivery {
                channel: "agent/obs".into(),
                payload: encode(p),
            })
            .collect();
        let latest = latest_payload(&batch).unwrap();
        assert_eq!((latest.timestamp, latest.error.as_deref()), (5, Some("out of turn")));
    }

    struct Flaky {
        failures: u32,
        calls: Arc<AtomicU32>,
    }

    impl Policy for Flaky {
        fn name(&self) -> &str {
            "flaky"
        }

        fn decide(&mut self, _: &DecisionContext) -> Result<Decision, PolicyError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(BackendError::Timeout.into())
            } else {
                Ok(Decision::Act("EDITOR_UPDATE(text=ok)".into()))
            }
        }
    }

    #[test]
    fn transient_failures_retry_then_fall_back_to_waiting() {
        let (coord, brief) = session();
        let payload = coord.get_payload(&Role::agent(), 0).unwrap();
        let run = |failures| {
            let calls = Arc::new(AtomicU32::new(0));
            let policy = Flaky { failures, calls: calls.clone() };
            let mut node = TeamNode::agent(brief.clone(), Box::new(policy)).with_retry(RetryPolicy::without_sleep());
            let out = node.on_payload(&payload);
            (out, calls.load(Ordering::SeqCst), node.fallbacks())
        };
        assert_eq!(run(2), (Some("EDITOR_UPDATE(text=ok)".into()), 3, 0));
        assert_eq!(run(10), (Some(wait_action()), 4, 1));
    }
}
