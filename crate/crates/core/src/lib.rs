//! Decision engine for connected vehicles, applied to congestion
//! management around partially obstructed roads.
//!
//! The pipeline mirrors the deployed architecture: an in-car side predicts
//! the driver's next links from trip history ([`ranking`], [`prediction`])
//! and parses incident reports against the prediction ([`events`],
//! [`engine`]); a remote side regulates access to the obstructed link and
//! spreads denied vehicles over alternatives ([`control`], [`balancer`]);
//! the final per-vehicle coin tosses live in [`determination`]. The [`sim`]
//! module closes the loop with a deterministic mesoscopic plant and a
//! numerical harness for periodic obstructions.

pub mod balancer;
pub mod control;
pub mod determination;
pub mod engine;
pub mod events;
pub mod network;
pub mod prediction;
pub mod ranking;
pub mod rng;
pub mod sim;

pub use balancer::{
    balance, generate_alternatives, AlternativeRoute, AlternativeSet, BalanceVector,
};
pub use control::{admission_probability, controller_output, ControllerOutput, ControllerState};
pub use determination::{
    allocation_probability, decide_route, history_weight, update_history, AllocationHistory,
    FairnessConfig, Phi, RouteDecision,
};
pub use engine::{parse_route, ParseVerdict};
pub use events::{
    format_event, match_link, parse_event, Event, IncidentClose, IncidentOpen, Obstruction,
    ObstructionKind, ObstructionRegistry,
};
pub use network::{
    Coord, HistoryGraph, Link, LinkId, LinkState, NodeId, OccupancyTable, TrafficGraph, VehicleId,
};
pub use prediction::{
    build_tree, predict_route, score_branch, PredictedRoute, PredictionConfig, PredictionTree,
    RootPolicy,
};
pub use ranking::{edge_frequencies, rank_edges, EdgeFrequencies, EdgeRanks, RankingConfig};
pub use sim::{
    run_regular_harness, run_scenario, MetricsBundle, RandomWalkConfig, Scenario,
    ScenarioOverrides, SimMode,
};
