//! Discrete-time mesoscopic traffic simulation and the regular-obstruction
//! numerical harness.
//!
//! The plant is deliberately simple: vehicles traverse links in
//! `ceil(length / speed)` ticks and links count their occupants. Capacity is
//! enforced statistically by the admission controller, never by blocking.

mod harness;
mod metrics;
mod scenario;
mod world;

pub use harness::{
    run_regular_harness, AllocationTrace, HarnessOutput, HarnessSpec, RandomWalkConfig,
};
pub use metrics::{AllocationRow, ControlRow, DecisionRow, FlowRow, MetricsBundle, OccupancyRow};
pub use scenario::{
    DemandRow, Scenario, ScenarioError, ScenarioOverrides, ScheduledEvent, SimMode, Spawning,
};
pub use world::{run_scenario, RunOutput, VehicleStatus, World};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Network(#[from] crate::network::NetworkError),
    #[error(transparent)]
    Event(#[from] crate::events::EventError),
    #[error(transparent)]
    Control(#[from] crate::control::ControlError),
    #[error(transparent)]
    Balance(#[from] crate::balancer::BalanceError),
    #[error(transparent)]
    Ranking(#[from] crate::ranking::RankingError),
    #[error("harness: {0}")]
    Harness(String),
}
