//! Session runs, trajectories and replay.

mod config;
mod runner;
mod session;
mod trajectory;

#[cfg(test)]
mod tests;

use thiserror::Error;

use crate::bus::BusError;
use crate::env::EnvError;
use crate::nodes::BackendError;

pub use config::{BackendKind, BusKind, PartyConfig, PartyPolicy, SessionConfig};
pub use runner::{
    build_team, diff_trajectories, load_backend, open_backend, run_ablation, run_realtime, run_session, wait_for_end,
    AblationDiff, AblationReport, BusConnector,
};
pub use session::{Evaluator, LiveSession};
pub use trajectory::{
    notices, replay, EventBody, EventRecord, Notice, RatingRecord, Recorder, ReplayReport, TrajectoryFooter,
    TrajectoryHeader, TrajectoryRecord, FORMAT_VERSION,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid session config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed trajectory: {0}")]
    Format(String),
    #[error("replay diverged at event {index}: {reason}")]
    Divergence { index: usize, reason: String },
}
