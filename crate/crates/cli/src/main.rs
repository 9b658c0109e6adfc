use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use collab_core::agents::AgentVariant;
use collab_core::bus::InteractionMode;
use collab_core::env::{PartyKind, Role};
use collab_core::eval::{
    evaluate, write_summary_csv, BatchSummary, ChecklistScorer, HumanRatingScorer, InitiativeJudge, LmJudge,
    RuleBasedJudge, TaskScorer,
};
use collab_core::harness::{
    build_team, load_backend, open_backend, replay, run_ablation, run_session, BackendKind, Evaluator, PartyConfig,
    PartyPolicy, SessionConfig, TrajectoryRecord,
};
use collab_core::tasks::{FixtureSet, TaskRegistry};
use collab_gateway::Gateway;

#[derive(Parser)]
#[command(name = "collab", version, about = "Run, replay and score human-agent collaboration sessions")]
struct Cli {
    /// Load task fixtures from this directory instead of the built-in set.
    #[arg(long, global = true)]
    fixtures: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulated session and write its trajectory.
    Run {
        #[command(flatten)]
        session: SessionArgs,
        /// Also run the other interaction mode and print a diff.
        #[arg(long)]
        ablation: bool,
    },
    /// Re-apply a trajectory and verify its hash chain and state digests.
    Replay { trajectory: PathBuf },
    /// Score trajectories and print a per-variant summary as CSV.
    Evaluate {
        #[arg(required = true)]
        trajectories: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = JudgeArg::Rule)]
        judge: JudgeArg,
        #[arg(long, value_enum, default_value_t = ScorerArg::Checklist)]
        scorer: ScorerArg,
        #[arg(long, value_enum, default_value_t = BackendArg::Remote)]
        backend: BackendArg,
        #[arg(long)]
        backend_path: Option<PathBuf>,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve one live session over WebSocket and print its join URL.
    Serve {
        #[command(flatten)]
        session: SessionArgs,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

#[derive(Args)]
struct SessionArgs {
    /// Full session config as JSON; the flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "travel_planning")]
    task: String,
    #[arg(long, default_value = "q1")]
    instance: String,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum, default_value_t = VariantArg::Collaborative)]
    variant: VariantArg,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    step_limit: Option<u32>,
    /// Seconds of inactivity before everyone is nudged.
    #[arg(long)]
    idle_threshold: Option<f64>,
    #[arg(long)]
    wall_clock_limit: Option<u64>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    /// Script (scripted backend) or transcript (replay backend).
    #[arg(long)]
    backend_path: Option<PathBuf>,
    /// Trajectory file, or directory for `serve`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    NonTurnTaking,
    TurnTaking,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Autonomous,
    Collaborative,
    SituationalPlanning,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Replay,
    Scripted,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum JudgeArg {
    Rule,
    Lm,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScorerArg {
    Checklist,
    Rating,
}

impl From<BackendArg> for BackendKind {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Replay => BackendKind::Replay,
            BackendArg::Scripted => BackendKind::Scripted,
            BackendArg::Remote => BackendKind::Remote,
        }
    }
}

impl From<VariantArg> for AgentVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Autonomous => AgentVariant::Autonomous,
            VariantArg::Collaborative => AgentVariant::Collaborative,
            VariantArg::SituationalPlanning => AgentVariant::SituationalPlanning,
        }
    }
}

impl SessionArgs {
    fn config(&self, live: bool) -> Result<SessionConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                let mut cfg: SessionConfig =
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
                // Relative paths inside a config file are relative to that file.
                if let (Some(bp), Some(dir)) = (&cfg.backend_path, p.parent()) {
                    if bp.is_relative() {
                        cfg.backend_path = Some(dir.join(bp));
                    }
                }
                cfg
            }
            None => {
                let mut cfg = SessionConfig::simulated(&self.task, &self.instance, self.variant.into());
                if live {
                    cfg.team[0] = PartyConfig { role: Role::user(), kind: PartyKind::Human, policy: PartyPolicy::LiveHuman };
                }
                cfg
            }
        };
        if let Some(m) = self.mode {
            cfg.mode = match m {
                ModeArg::NonTurnTaking => InteractionMode::NonTurnTaking,
                ModeArg::TurnTaking => InteractionMode::TurnTaking,
            };
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(s) = self.step_limit {
            cfg.step_limit = s;
        }
        if let Some(t) = self.idle_threshold {
            cfg.idle_threshold_secs = t;
        }
        if let Some(w) = self.wall_clock_limit {
            cfg.wall_clock_limit_secs = w;
        }
        if let Some(b) = self.backend {
            cfg.backend = b.into();
        }
        if let Some(p) = &self.backend_path {
            cfg.backend_path = Some(p.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn registry(fixtures: Option<&Path>) -> Result<TaskRegistry> {
    Ok(match fixtures {
        Some(dir) => TaskRegistry::new(FixtureSet::load(dir)?),
        None => TaskRegistry::builtin(),
    })
}

fn summarize(t: &TrajectoryRecord) -> String {
    let m = t.footer.metrics.as_ref();
    let show = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
    format!(
        "end={:?} events={} delivered={} performance={} entropy={} digest={}",
        t.footer.end_reason,
        t.events.len(),
        m.is_some_and(|m| m.delivered),
        show(m.and_then(|m| m.task_performance)),
        show(m.and_then(|m| m.initiative_entropy)),
        t.footer.final_digest
    )
}

fn group_of(t: &TrajectoryRecord) -> String {
    let cfg = &t.header.config;
    let agents: Vec<String> = cfg
        .team
        .iter()
        .filter(|p| p.kind == PartyKind::Agent)
        .map(|p| p.policy.name())
        .collect();
    let mode = match cfg.mode {
        InteractionMode::NonTurnTaking => "",
        InteractionMode::TurnTaking => "+turn_taking",
    };
    format!("{}{mode}", agents.join("+"))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let reg = registry(cli.fixtures.as_deref())?;
    match cli.command {
        Command::Run { session, ablation } => {
            let cfg = session.config(false)?;
            let backend = load_backend(&cfg)?;
            if ablation {
                let make = || build_team(&cfg, &reg, backend.clone());
                let report = run_ablation(&cfg, &reg, &make, &Evaluator::default())?;
                println!("{}", serde_json::to_string_pretty(&report.diff)?);
                if let Some(out) = &session.out {
                    report.non_turn_taking.persist(&out.with_extension("non_turn_taking.jsonl"))?;
                    report.turn_taking.persist(&out.with_extension("turn_taking.jsonl"))?;
                }
            } else {
                let nodes = build_team(&cfg, &reg, backend)?;
                let t = run_session(&cfg, &reg, nodes, &Evaluator::default())?;
                println!("{}", summarize(&t));
                if let Some(out) = &session.out {
                    t.persist(out)?;
                }
            }
        }
        Command::Replay { trajectory } => {
            let t = TrajectoryRecord::load(&trajectory)?;
            let r = replay(&t, &reg)?;
            println!("ok: {} events, final digest {}", r.events, r.final_digest);
        }
        Command::Evaluate { trajectories, judge, scorer, backend, backend_path, out } => {
            let judge: Box<dyn InitiativeJudge> = match judge {
                JudgeArg::Rule => Box::new(RuleBasedJudge),
                JudgeArg::Lm => Box::new(LmJudge::new(open_backend(backend.into(), backend_path.as_deref())?)),
            };
            let scorer: Box<dyn TaskScorer> = match scorer {
                ScorerArg::Checklist => Box::new(ChecklistScorer),
                ScorerArg::Rating => Box::new(HumanRatingScorer),
            };
            let mut groups: BTreeMap<String, Vec<_>> = BTreeMap::new();
            for path in &trajectories {
                let t = TrajectoryRecord::load(path).with_context(|| format!("loading {}", path.display()))?;
                let cfg = &t.header.config;
                let inst = reg.instance(&cfg.task_id, &cfg.instance_id)?;
                let report = evaluate::<f64>(&t.footer.outcome, &inst, judge.as_ref(), scorer.as_ref())?;
                groups.entry(group_of(&t)).or_default().push(report);
            }
            let rows: Vec<_> = groups.iter().map(|(g, r)| BatchSummary::from_reports(g, r)).collect();
            match out {
                Some(p) => write_summary_csv(std::fs::File::create(p)?, &rows)?,
                None => write_summary_csv(std::io::stdout().lock(), &rows)?,
            }
        }
        Command::Serve { session, addr } => {
            let cfg = session.config(true)?;
            let mut gw = Gateway::new(reg);
            if let Some(dir) = &session.out {
                std::fs::create_dir_all(dir)?;
                gw = gw.with_out_dir(dir);
            }
            let ticket = gw.create_session(cfg)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&addr).await?;
                println!("session {} for {}: ws://{}{}", ticket.session_id, ticket.role, listener.local_addr()?, ticket.ws_path());
                tokio::select! {
                    r = gw.serve(listener) => r?,
                    _ = tokio::signal::ctrl_c() => {}
                }
                anyhow::Ok(())
            })?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_the_config() {
        let cli = Cli::parse_from([
            "collab", "run", "--task", "related_work", "--instance", "rw1", "--mode", "turn-taking", "--seed", "9",
            "--step-limit", "12", "--idle-threshold", "2.5",
        ]);
        let Command::Run { session, .. } = cli.command else { panic!("wrong subcommand") };
        let cfg = session.config(false).unwrap();
        assert_eq!((cfg.task_id.as_str(), cfg.instance_id.as_str()), ("related_work", "rw1"));
        assert_eq!((cfg.mode, cfg.seed, cfg.step_limit), (InteractionMode::TurnTaking, 9, 12));
        assert_eq!(cfg.idle_threshold_secs, 2.5);
        let live = session.config(true).unwrap();
        assert_eq!(live.team[0].policy, PartyPolicy::LiveHuman);
    }
}
