use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::path::Path;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::session::{Evaluator, LiveSession};
use super::trajectory::EventBody;
use super::{BackendKind, HarnessError, PartyPolicy, SessionConfig, TrajectoryRecord};
use crate::agents::LmAgent;
use crate::bus::{
    decode, encode, BusError, Channel, InProcessBus, InteractionMode, MessageBus, Outbound, StepMessage,
    StepOutcome, Subscription,
};
use crate::env::PartyKind;
use crate::nodes::{
    latest_payload, node_loop, subscribe_node, Backend, HttpBackend, NodeBrief, ReplayBackend, RetryPolicy,
    ScriptedBackend, ScriptedPolicy, SimulatedHuman, TeamNode,
};
use crate::tasks::TaskRegistry;

/// Resolves the configured language-model backend. Sessions where every
/// party is scripted or live get an empty scripted backend.
pub fn load_backend(config: &SessionConfig) -> Result<Arc<dyn Backend>, HarnessError> {
    let needs_model = config
        .team
        .iter()
        .any(|p| matches!(p.policy, PartyPolicy::Agent { .. } | PartyPolicy::SimulatedHuman));
    if !needs_model {
        return Ok(Arc::new(ScriptedBackend::default()));
    }
    open_backend(config.backend, config.backend_path.as_deref())
}

/// Opens a backend of `kind`; the scripted and replay kinds read `path`.
pub fn open_backend(kind: BackendKind, path: Option<&Path>) -> Result<Arc<dyn Backend>, HarnessError> {
    let path = || path.ok_or_else(|| HarnessError::Config("a backend file is required for this backend".into()));
    Ok(match kind {
        BackendKind::Scripted => {
            let text = std::fs::read_to_string(path()?)?;
            let b: ScriptedBackend =
                serde_json::from_str(&text).map_err(|e| HarnessError::Format(e.to_string()))?;
            Arc::new(b)
        }
        BackendKind::Replay => Arc::new(ReplayBackend::load(path()?)?),
        BackendKind::Remote => Arc::new(HttpBackend::from_env()?),
    })
}

/// One node per party that is not a live human, in team order.
pub fn build_team(
    config: &SessionConfig,
    registry: &TaskRegistry,
    backend: Arc<dyn Backend>,
) -> Result<Vec<TeamNode>, HarnessError> {
    config.validate()?;
    let team = config.team()?;
    let instance = registry.instance(&config.task_id, &config.instance_id)?;
    let spec = registry.spec(&config.task_id)?;
    let mut nodes = Vec::new();
    for p in &config.team {
        let brief = NodeBrief::new(p.role.clone(), &team, &spec, &instance);
        let hidden = instance.hidden_info.clone();
        let node = match &p.policy {
            PartyPolicy::LiveHuman => continue,
            PartyPolicy::Agent { variant } => {
                TeamNode::agent(brief, Box::new(LmAgent::new(*variant, p.role.as_str(), backend.clone())))
            }
            PartyPolicy::SimulatedHuman => TeamNode::simulated_human(
                brief,
                hidden,
                Box::new(SimulatedHuman::new(p.role.as_str(), backend.clone())),
            ),
            PartyPolicy::Scripted { actions, repeat } => {
                let acts: Vec<&str> = actions.iter().map(String::as_str).collect();
                let policy = ScriptedPolicy::acts(p.role.as_str(), &acts);
                let policy = if *repeat { policy.repeating() } else { policy };
                match p.kind {
                    PartyKind::Agent => TeamNode::agent(brief, Box::new(policy)),
                    PartyKind::Human => TeamNode::simulated_human(brief, hidden, Box::new(policy)),
                }
            }
        };
        nodes.push(node);
    }
    Ok(nodes)
}

fn publish_all(bus: &dyn MessageBus, out: &[Outbound]) -> Result<(), BusError> {
    for o in out {
        match bus.publish(&o.channel, &o.to_bytes()) {
            Ok(_) | Err(BusError::SessionClosed) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

fn annotate_fallbacks(session: &mut LiveSession, nodes: &[TeamNode]) {
    for n in nodes.iter().filter(|n| n.fallbacks() > 0) {
        session.annotate(&format!("fallback_waits:{}={}", n.role(), n.fallbacks()));
    }
}

/// Runs a whole session on a logical clock over the in-process bus.
///
/// Each decision takes a latency drawn from a ChaCha stream seeded by
/// `config.seed`; while a node is deciding, notifications queue on its
/// subscription and are collapsed to the newest when it is free again.
/// With deterministic backends the trajectory is a pure function of the
/// configuration.
pub fn run_session(
    config: &SessionConfig,
    registry: &TaskRegistry,
    nodes: Vec<TeamNode>,
    evaluator: &Evaluator,
) -> Result<TrajectoryRecord, HarnessError> {
    let mut session = LiveSession::new(config.clone(), registry)?;
    if nodes.len() != config.team.len() {
        return Err(HarnessError::Config("simulated sessions need a node for every party".into()));
    }
    let mut nodes: Vec<TeamNode> = nodes.into_iter().map(|n| n.with_retry(RetryPolicy::without_sleep())).collect();
    let bus = InProcessBus::new();
    let subs = nodes
        .iter()
        .map(|n| subscribe_node(&bus, n.role()))
        .collect::<Result<Vec<_>, _>>()?;
    let steps = bus.subscribe(&[Channel::Step])?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (lo, hi) = config.latency_ms;
    let wall = config.wall_clock_limit_ms();

    let mut inflight: BinaryHeap<Reverse<(u64, u64, usize, String)>> = BinaryHeap::new();
    let mut busy = vec![false; nodes.len()];
    let mut seq = 0u64;
    let mut now = 0u64;
    let mut next_tick = config.tick_ms;

    let opening = session.start(now)?;
    if let Err(e) = publish_all(&bus, &opening) {
        session.fail(&e.to_string(), now)?;
    }
    while session.ended().is_none() {
        for (i, node) in nodes.iter_mut().enumerate() {
            if busy[i] {
                continue;
            }
            let batch = subs[i].drain();
            if batch.is_empty() {
                continue;
            }
            let Some(payload) = latest_payload(&batch) else { continue };
            if let Some(action) = node.on_payload(&payload) {
                let t = now + rng.random_range(lo..=hi);
                inflight.push(Reverse((t, seq, i, action)));
                seq += 1;
                busy[i] = true;
            }
        }

        let next_step = inflight.peek().map(|Reverse((t, ..))| *t);
        let t = next_step.map_or(next_tick, |s| s.min(next_tick));
        if t >= wall {
            now = wall;
            let out = session.tick(now)?;
            publish_all(&bus, &out)?;
            break;
        }
        now = t;
        let outbound = if next_step == Some(t) {
            let Reverse((_, _, i, action)) = inflight.pop().expect("peeked");
            busy[i] = false;
            let msg = StepMessage { role: nodes[i].role().clone(), action };
            if let Err(e) = bus.publish(&Channel::Step, &encode(&msg)) {
                session.fail(&e.to_string(), now)?;
                break;
            }
            let mut out = Vec::new();
            for d in steps.drain() {
                match decode::<StepMessage>(&d.payload) {
                    Ok(m) => out.extend(session.submit(&m, now)?.outbound),
                    Err(e) => log::warn!("undecodable step message: {e}"),
                }
            }
            out
        } else {
            next_tick += config.tick_ms;
            session.tick(now)?
        };
        if let Err(e) = publish_all(&bus, &outbound) {
            session.fail(&e.to_string(), now)?;
        }
    }
    annotate_fallbacks(&mut session, &nodes);
    session.finish(now, evaluator)
}

/// Opens one connection to a session's bus.
pub type BusConnector<'a> = dyn Fn() -> Result<Arc<dyn MessageBus>, BusError> + 'a;

/// Runs a session in real time: each node loops on its own thread and its
/// own bus connection while this thread applies steps and ticks.
pub fn run_realtime(
    config: &SessionConfig,
    registry: &TaskRegistry,
    nodes: Vec<TeamNode>,
    connect: &BusConnector<'_>,
    evaluator: &Evaluator,
) -> Result<TrajectoryRecord, HarnessError> {
    let mut session = LiveSession::new(config.clone(), registry)?;
    let bus = connect()?;
    let steps = bus.subscribe(&[Channel::Step])?;
    let mut workers = Vec::new();
    for mut node in nodes {
        let node_bus = connect()?;
        let sub = subscribe_node(node_bus.as_ref(), node.role())?;
        workers.push(thread::spawn(move || {
            let result = node_loop(&mut node, &sub, node_bus.as_ref());
            (node, result)
        }));
    }
    let started = Instant::now();
    let elapsed = || started.elapsed().as_millis() as u64;
    let tick = Duration::from_millis(config.tick_ms);
    let mut next_tick = tick;

    let result = (|| -> Result<(), HarnessError> {
        publish_all(bus.as_ref(), &session.start(0)?)?;
        while session.ended().is_none() {
            let wait = next_tick.saturating_sub(started.elapsed());
            match steps.recv_timeout(wait) {
                Ok(Some(d)) => {
                    let msg: StepMessage = decode(&d.payload).map_err(|e| HarnessError::Format(e.to_string()))?;
                    let h = session.submit(&msg, elapsed())?;
                    publish_all(bus.as_ref(), &h.outbound)?;
                }
                Ok(None) => {
                    next_tick += tick;
                    let out = session.tick(elapsed())?;
                    publish_all(bus.as_ref(), &out)?;
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok(())
    })();
    if let Err(e) = result {
        let out = session.fail(&e.to_string(), elapsed())?;
        let _ = publish_all(bus.as_ref(), &out);
    }
    let mut finished = Vec::new();
    for w in workers {
        match w.join() {
            Ok((node, Ok(_))) => finished.push(node),
            Ok((node, Err(e))) => {
                session.annotate(&format!("node_error:{}={e}", node.role()));
                finished.push(node);
            }
            Err(_) => session.annotate("node_panicked"),
        }
    }
    annotate_fallbacks(&mut session, &finished);
    let now = elapsed();
    session.finish(now, evaluator)
}

/// Side-by-side summary of the same policies run with and without the
/// notification protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationDiff {
    pub applied: BTreeMap<String, (usize, usize)>,
    pub messages: (usize, usize),
    pub waits: (usize, usize),
    pub rejected: (usize, usize),
    pub idle_ticks: (usize, usize),
    pub end_reasons: (String, String),
    pub same_final_state: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub non_turn_taking: TrajectoryRecord,
    pub turn_taking: TrajectoryRecord,
    pub diff: AblationDiff,
}

fn tally(t: &TrajectoryRecord) -> (BTreeMap<String, usize>, usize, usize, usize, usize) {
    let mut applied = BTreeMap::new();
    let (mut messages, mut waits, mut rejected) = (0, 0, 0);
    for (role, _, outcome) in t.steps() {
        match outcome {
            StepOutcome::Applied { .. } => *applied.entry(role.to_string()).or_insert(0) += 1,
            StepOutcome::Message { .. } => messages += 1,
            StepOutcome::Wait => waits += 1,
            StepOutcome::Rejected { .. } => rejected += 1,
        }
    }
    let ticks = t.events.iter().filter(|e| matches!(e.body, EventBody::Tick { .. })).count();
    (applied, messages, waits, rejected, ticks)
}

pub fn diff_trajectories(a: &TrajectoryRecord, b: &TrajectoryRecord) -> AblationDiff {
    let (aa, am, aw, ar, at) = tally(a);
    let (ba, bm, bw, br, bt) = tally(b);
    let roles: std::collections::BTreeSet<&String> = aa.keys().chain(ba.keys()).collect();
    AblationDiff {
        applied: roles
            .into_iter()
            .map(|r| (r.clone(), (aa.get(r).copied().unwrap_or(0), ba.get(r).copied().unwrap_or(0))))
            .collect(),
        messages: (am, bm),
        waits: (aw, bw),
        rejected: (ar, br),
        idle_ticks: (at, bt),
        end_reasons: (format!("{:?}", a.footer.end_reason), format!("{:?}", b.footer.end_reason)),
        same_final_state: a.footer.final_digest == b.footer.final_digest,
    }
}

/// Runs `config` in both interaction modes with fresh nodes from `make_nodes`.
pub fn run_ablation(
    config: &SessionConfig,
    registry: &TaskRegistry,
    make_nodes: &dyn Fn() -> Result<Vec<TeamNode>, HarnessError>,
    evaluator: &Evaluator,
) -> Result<AblationReport, HarnessError> {
    let mut free = config.clone();
    free.mode = InteractionMode::NonTurnTaking;
    let mut turns = config.clone();
    turns.mode = InteractionMode::TurnTaking;
    let non_turn_taking = run_session(&free, registry, make_nodes()?, evaluator)?;
    let turn_taking = run_session(&turns, registry, make_nodes()?, evaluator)?;
    let diff = diff_trajectories(&non_turn_taking, &turn_taking);
    Ok(AblationReport { non_turn_taking, turn_taking, diff })
}

/// Receives until `end`, for callers that drive a node by hand.
pub fn wait_for_end(sub: &Subscription, timeout: Duration) -> Result<bool, BusError> {
    let deadline = Instant::now() + timeout;
    loop {
        let left = deadline.saturating_duration_since(Instant::now());
        if left.is_zero() {
            return Ok(false);
        }
        match sub.recv_timeout(left)? {
            Some(d) if d.channel == Channel::End.name() => return Ok(true),
            Some(_) => {}
            None => return Ok(false),
        }
    }
}
