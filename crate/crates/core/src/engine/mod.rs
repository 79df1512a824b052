//! Seeded discrete-event simulation of a whole network, metrics, and sweeps.

pub mod event;
pub mod metrics;
pub mod rng;
pub mod sim;
pub mod sweep;

use crate::channel::ScenarioError;

pub use metrics::{AccuracyPoint, MetricsLog, NodeSample, Summary, METRICS_HEADER};
pub use sim::{run, run_with, PacketLogMode, RunOptions, RunOutput};
pub use sweep::{sweep, Stat, SweepResult, SweepRow};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("no values given for sweep parameter `{0}`")]
    EmptySweep(String),
    #[error("a sweep needs at least one seed")]
    NoSeeds,
}
