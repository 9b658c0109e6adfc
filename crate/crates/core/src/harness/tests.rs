use super::*;
use crate::bus::{EndReason, InteractionMode, StepOutcome};
use crate::env::{PartyKind, Role};
use crate::nodes::ScriptedBackend;
use crate::tasks::TaskRegistry;
use std::sync::Arc;

const WAIT: &str = "WAIT_TEAMMATE_CONTINUE()";

fn scripted(role: Role, kind: PartyKind, actions: &[&str], repeat: bool) -> PartyConfig {
    PartyConfig {
        role,
        kind,
        policy: PartyPolicy::Scripted { actions: actions.iter().map(|s| s.to_string()).collect(), repeat },
    }
}

fn planning_config() -> SessionConfig {
    SessionConfig::with_team(
        "travel_planning",
        "q1",
        vec![
            scripted(Role::user(), PartyKind::Human, &["SEND_TEAMMATE_MESSAGE(message=My total budget is $1800.)", WAIT], true),
            scripted(
                Role::agent(),
                PartyKind::Agent,
                &[
                    "SEND_TEAMMATE_MESSAGE(message=What is your total budget for the trip?)",
                    "ACCOMMODATION_SEARCH(city=San Francisco)",
                    "EDITOR_UPDATE(text=Seattle to San Francisco. Vegan dinners. Entire home. Budget $1800.)",
                    "FINISH()",
                ],
                false,
            ),
        ],
    )
}

fn run(config: &SessionConfig) -> TrajectoryRecord {
    let reg = TaskRegistry::builtin();
    let nodes = build_team(config, &reg, Arc::new(ScriptedBackend::default())).unwrap();
    run_session(config, &reg, nodes, &Evaluator::default()).unwrap()
}

#[test]
fn scripted_session_delivers_and_scores() {
    let t = run(&planning_config());
    assert_eq!(t.footer.end_reason, EndReason::Finished);
    let m = t.footer.metrics.as_ref().unwrap();
    assert!(m.delivered);
    assert_eq!(m.task_performance, Some(1.0));
    assert_eq!(t.footer.outcome.chat.len(), 2);
    assert!(t.footer.failure.is_none());
    let applied: Vec<_> = t.steps().filter(|s| matches!(s.2, StepOutcome::Applied { .. })).map(|s| s.1).collect();
    assert_eq!(applied.last(), Some(&"FINISH()"));
    replay(&t, &reg()).unwrap();
}

fn reg() -> TaskRegistry {
    TaskRegistry::builtin()
}

#[test]
fn waiting_forever_hits_the_wall_clock() {
    let mut cfg = SessionConfig::with_team(
        "travel_planning",
        "q1",
        vec![
            scripted(Role::user(), PartyKind::Human, &[WAIT], true),
            scripted(Role::agent(), PartyKind::Agent, &[WAIT], true),
        ],
    );
    cfg.wall_clock_limit_secs = 60;
    let t = run(&cfg);
    assert_eq!(t.footer.end_reason, EndReason::WallClock);
    assert!(!t.footer.metrics.unwrap().delivered);
    assert!(matches!(t.events.last().unwrap().body, EventBody::End { .. }));
    assert!(t.events.iter().any(|e| matches!(e.body, EventBody::Tick { .. })));
}

#[test]
fn same_seed_same_trajectory() {
    let mut cfg = planning_config();
    cfg.seed = 7;
    assert_eq!(run(&cfg).to_jsonl(), run(&cfg).to_jsonl());
    let other = SessionConfig { seed: 8, ..cfg.clone() };
    assert_ne!(run(&cfg).header.hash(), run(&other).header.hash());
}

#[test]
fn persisted_trajectory_round_trips_and_replays() {
    let t = run(&planning_config());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.jsonl");
    t.persist(&path).unwrap();
    let back = TrajectoryRecord::load(&path).unwrap();
    assert_eq!(back, t);
    let report = replay(&back, &reg()).unwrap();
    assert_eq!(report.final_digest, t.footer.final_digest);
    assert_eq!(report.events, t.events.len());

    let text = std::fs::read_to_string(&path).unwrap();
    let truncated: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
    assert!(matches!(TrajectoryRecord::from_jsonl(truncated.as_bytes()), Err(HarnessError::Format(_))));
}

#[test]
fn tampering_is_located() {
    let t = run(&planning_config());
    let target = t.events.iter().position(|e| matches!(e.body, EventBody::Step { .. })).unwrap() + 1;
    let mut edited = t.clone();
    if let EventBody::Step { action, .. } = &mut edited.events[target].body {
        action.push('x');
    } else {
        edited.events[target].t_ms += 1;
    }
    match replay(&edited, &reg()) {
        Err(HarnessError::Divergence { index, .. }) => assert_eq!(index, target),
        other => panic!("expected divergence, got {other:?}"),
    }

    // A consistent rewrite still has to agree with the environment.
    let mut forged = t.clone();
    let last = forged.events.len() - 1;
    forged.events[last].digest = "0".repeat(64);
    let mut rec = Recorder::new(forged.header.clone());
    for e in &forged.events {
        rec.append(e.t_ms, e.body.clone(), e.digest.clone()).unwrap();
    }
    let forged = rec.finish(forged.footer).unwrap();
    match replay(&forged, &reg()) {
        Err(HarnessError::Divergence { index, reason }) => {
            assert_eq!(index, last);
            assert_eq!(reason, "state digest differs");
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn streamed_file_matches_the_returned_record() {
    let cfg = planning_config();
    let reg = reg();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("live.jsonl");
    let mut s = LiveSession::new(cfg, &reg).unwrap().stream_to(&path).unwrap();
    s.start(0).unwrap();
    let msg = crate::bus::StepMessage { role: Role::agent(), action: "FINISH()".into() };
    s.submit(&msg, 1500).unwrap();
    s.rate(RatingRecord { role: Role::user(), outcome: Some(2), satisfaction: Some(3), preference: None })
        .unwrap();
    assert!(s
        .rate(RatingRecord { role: Role::user(), outcome: Some(9), satisfaction: None, preference: None })
        .is_err());
    let t = s.finish(1500, &Evaluator::default()).unwrap();
    assert_eq!(TrajectoryRecord::load(&path).unwrap(), t);
    assert_eq!(t.footer.outcome.outcome_rating, Some(2));
    assert!(!t.footer.metrics.unwrap().delivered);
}

#[test]
fn turn_taking_alternates_applied_steps() {
    let mut cfg = SessionConfig::with_team(
        "travel_planning",
        "q1",
        vec![
            scripted(Role::user(), PartyKind::Human, &["SEND_TEAMMATE_MESSAGE(message=Plan it for me.)", WAIT], true),
            scripted(
                Role::agent(),
                PartyKind::Agent,
                &["CITY_SEARCH(state=California)", "ACCOMMODATION_SEARCH(city=San Francisco)", "FINISH()"],
                false,
            ),
        ],
    );
    cfg.mode = InteractionMode::TurnTaking;
    let t = run(&cfg);
    let movers: Vec<&Role> = t
        .steps()
        .filter(|(_, _, o)| !matches!(o, StepOutcome::Rejected { .. }))
        .map(|(r, _, _)| r)
        .collect();
    assert_eq!(movers[0], &Role::user());
    assert!(movers.windows(2).all(|w| w[0] != w[1]), "{movers:?}");
    assert!(!t.events.iter().any(|e| matches!(e.body, EventBody::Tick { .. })));
    assert_eq!(t.footer.end_reason, EndReason::Finished);
}

#[test]
fn ablation_reports_both_modes() {
    let cfg = planning_config();
    let reg = reg();
    let make = || build_team(&cfg, &reg, Arc::new(ScriptedBackend::default()));
    let r = run_ablation(&cfg, &reg, &make, &Evaluator::default()).unwrap();
    assert_eq!(r.non_turn_taking.header.config.mode, InteractionMode::NonTurnTaking);
    assert_eq!(r.turn_taking.header.config.mode, InteractionMode::TurnTaking);
    assert_eq!(r.diff.messages.0, 2);
    assert_eq!(r.diff, diff_trajectories(&r.non_turn_taking, &r.turn_taking));
}

#[test]
fn config_validation() {
    let mut cfg = planning_config();
    cfg.team[1].policy = PartyPolicy::SimulatedHuman;
    assert!(matches!(cfg.validate(), Err(HarnessError::Config(_))));
    let mut cfg = planning_config();
    cfg.mode = InteractionMode::TurnTaking;
    cfg.team.push(scripted(Role::new("third"), PartyKind::Agent, &[WAIT], true));
    assert!(cfg.validate().is_err());
    let json = serde_json::to_string(&planning_config()).unwrap();
    assert_eq!(serde_json::from_str::<SessionConfig>(&json).unwrap(), planning_config());
}

#[test]
fn realtime_run_over_the_in_process_bus() {
    let mut cfg = planning_config();
    cfg.tick_ms = 50;
    cfg.wall_clock_limit_secs = 20;
    let reg = reg();
    let nodes = build_team(&cfg, &reg, Arc::new(ScriptedBackend::default())).unwrap();
    let bus: Arc<dyn crate::bus::MessageBus> = Arc::new(crate::bus::InProcessBus::new());
    let connect = || Ok(bus.clone());
    let t = run_realtime(&cfg, &reg, nodes, &connect, &Evaluator::default()).unwrap();
    assert_eq!(t.footer.end_reason, EndReason::Finished);
    replay(&t, &reg).unwrap();
}
