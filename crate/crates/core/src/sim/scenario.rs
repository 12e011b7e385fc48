//! Scenario configuration: a TOML document naming the network, demand,
//! obstruction schedule, controller parameters and run mode.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;
use thiserror::Error;

use crate::balancer::{AlternativeRoute, AlternativeSet, BalanceError, OccupancyMeasure};
use crate::determination::{FairnessConfig, Phi};
use crate::events::{parse_event, Event, EventError, ObstructionKind};
use crate::network::{LinkId, NetworkError, NodeId, TrafficGraph};
use crate::prediction::{PredictionConfig, RootPolicy};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario: {0}")]
    Invalid(String),
    #[error("scenario event at tick {tick}: {source}")]
    Event {
        tick: u64,
        #[source]
        source: EventError,
    },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Balance(#[from] BalanceError),
    #[error("cannot parse scenario: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

/// The three experiment arms: no obstruction, obstruction without control,
/// and obstruction with the full control loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SimMode {
    Baseline,
    Uncontrolled,
    #[default]
    Controlled,
}

impl FromStr for SimMode {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(SimMode::Baseline),
            "uncontrolled" => Ok(SimMode::Uncontrolled),
            "controlled" => Ok(SimMode::Controlled),
            other => Err(invalid(format!(
                "unknown mode `{other}` (expected baseline|uncontrolled|controlled)"
            ))),
        }
    }
}

impl std::fmt::Display for SimMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SimMode::Baseline => f.write_str("baseline"),
            SimMode::Uncontrolled => f.write_str("uncontrolled"),
            SimMode::Controlled => f.write_str("controlled"),
        }
    }
}

/// When a demand row injects vehicles.
#[derive(Debug, Clone)]
pub enum Spawning {
    /// Seeded Bernoulli spawn each tick within `[start, end)`.
    Rate {
        rate: f64,
        start: u64,
        end: Option<u64>,
    },
    /// Explicit spawn ticks.
    Ticks(Vec<u64>),
}

#[derive(Debug, Clone)]
pub struct DemandRow {
    pub name: String,
    pub route: Vec<LinkId>,
    pub spawning: Spawning,
}

#[derive(Debug, Clone)]
pub struct ScheduledEvent {
    pub tick: u64,
    pub event: Event,
    pub kind: ObstructionKind,
    pub radius_m: Option<f64>,
}

/// A fully resolved, validated simulation configuration.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub graph: TrafficGraph,
    pub mode: SimMode,
    pub seed: u64,
    pub duration_ticks: u64,
    pub tick_seconds: f64,
    pub alpha: f64,
    pub fairness: FairnessConfig,
    pub prediction: PredictionConfig,
    pub damping: f64,
    pub radius_m: f64,
    pub misprediction_probability: f64,
    pub k_shortest: usize,
    pub occupancy_measure: OccupancyMeasure,
    pub demand: Vec<DemandRow>,
    pub events: Vec<ScheduledEvent>,
    pub alternative_overrides: BTreeMap<LinkId, AlternativeSet>,
}

/// Command-line level parameter overrides, applied after the file parses.
#[derive(Debug, Clone, Default)]
pub struct ScenarioOverrides {
    pub seed: Option<u64>,
    pub mode: Option<SimMode>,
    pub duration_ticks: Option<u64>,
    /// Replaces the max capacity of every opening event.
    pub capacity: Option<u32>,
    pub alpha: Option<f64>,
    pub damping: Option<f64>,
    pub horizon: Option<usize>,
    pub radius_m: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    network: Option<String>,
    network_text: Option<String>,
    nodes: Option<String>,
    nodes_text: Option<String>,
    mode: Option<String>,
    seed: Option<u64>,
    duration_ticks: u64,
    tick_seconds: Option<f64>,
    #[serde(default)]
    controller: ControllerSection,
    #[serde(default)]
    prediction: PredictionSection,
    #[serde(default)]
    assessment: AssessmentSection,
    #[serde(default)]
    misprediction: MispredictionSection,
    #[serde(default)]
    balancer: BalancerSection,
    #[serde(default)]
    demand: Vec<DemandSection>,
    #[serde(default)]
    events: Vec<EventSection>,
    #[serde(default)]
    alternatives: Vec<AlternativeSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ControllerSection {
    alpha: Option<f64>,
    h_cap: Option<f64>,
    phi_coefficient: Option<f64>,
    phi_exponent: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionSection {
    horizon: Option<usize>,
    damping: Option<f64>,
    root: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AssessmentSection {
    radius_m: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MispredictionSection {
    probability: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BalancerSection {
    k_shortest: Option<usize>,
    occupancy_measure: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DemandSection {
    name: String,
    route: Vec<String>,
    rate: Option<f64>,
    start_tick: Option<u64>,
    end_tick: Option<u64>,
    spawn_ticks: Option<Vec<u64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventSection {
    tick: u64,
    text: String,
    kind: Option<String>,
    radius_m: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AlternativeSection {
    obstructed: Vec<String>,
    routes: Vec<Vec<String>>,
}

impl Scenario {
    /// Loads and validates a scenario file. Relative network paths resolve
    /// against the scenario file's directory.
    pub fn load(
        path: impl AsRef<Path>,
        overrides: &ScenarioOverrides,
    ) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, path.parent(), overrides)
    }

    pub fn from_toml_str(
        text: &str,
        base_dir: Option<&Path>,
        overrides: &ScenarioOverrides,
    ) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = toml::from_str(text)?;
        Self::resolve(file, base_dir, overrides)
    }

    fn resolve(
        file: ScenarioFile,
        base_dir: Option<&Path>,
        overrides: &ScenarioOverrides,
    ) -> Result<Self, ScenarioError> {
        let mut graph = match (&file.network, &file.network_text) {
            (Some(path), None) => TrafficGraph::load_edge_list(resolve_path(base_dir, path))?,
            (None, Some(text)) => TrafficGraph::parse_edge_list(text)?,
            (Some(_), Some(_)) => {
                return Err(invalid("give either `network` or `network_text`, not both"))
            }
            (None, None) => return Err(invalid("missing network (`network` or `network_text`)")),
        };
        match (&file.nodes, &file.nodes_text) {
            (Some(path), None) => graph.load_node_coords(resolve_path(base_dir, path))?,
            (None, Some(text)) => graph.parse_node_coords(text)?,
            (Some(_), Some(_)) => {
                return Err(invalid("give either `nodes` or `nodes_text`, not both"))
            }
            (None, None) => {}
        }

        let mode = match (&overrides.mode, &file.mode) {
            (Some(m), _) => *m,
            (None, Some(s)) => s.parse()?,
            (None, None) => SimMode::default(),
        };
        let seed = overrides.seed.or(file.seed).unwrap_or(0);
        let duration_ticks = overrides.duration_ticks.unwrap_or(file.duration_ticks);
        if duration_ticks < 1 {
            return Err(invalid("duration_ticks must be at least 1"));
        }
        let tick_seconds = file.tick_seconds.unwrap_or(1.0);
        if !(tick_seconds.is_finite() && tick_seconds > 0.0) {
            return Err(invalid("tick_seconds must be positive"));
        }

        let alpha = overrides.alpha.or(file.controller.alpha).unwrap_or(0.1);
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid(format!("alpha must lie in (0,1), got {alpha}")));
        }
        let fairness = FairnessConfig {
            phi: Phi {
                coefficient: file.controller.phi_coefficient.unwrap_or(4.0),
                exponent: file.controller.phi_exponent.unwrap_or(3.0),
            },
            h_cap: file.controller.h_cap.unwrap_or(1e6),
        };
        if !(fairness.phi.coefficient > 0.0 && fairness.phi.exponent > 0.0) {
            return Err(invalid(
                "phi must be strictly increasing: coefficient and exponent positive",
            ));
        }

        let horizon = overrides.horizon.or(file.prediction.horizon).unwrap_or(5);
        if horizon < 1 {
            return Err(invalid("prediction horizon must be at least 1"));
        }
        let root_policy = match file.prediction.root.as_deref() {
            None | Some("head") => RootPolicy::Head,
            Some("tail") => RootPolicy::Tail,
            Some(other) => return Err(invalid(format!("unknown prediction root `{other}`"))),
        };
        let damping = overrides
            .damping
            .or(file.prediction.damping)
            .unwrap_or(0.93);
        if !(damping > 0.0 && damping < 1.0) {
            return Err(invalid(format!("damping must lie in (0,1), got {damping}")));
        }

        let radius_m = overrides
            .radius_m
            .or(file.assessment.radius_m)
            .unwrap_or(crate::events::DEFAULT_ASSESSMENT_RADIUS_M);
        if !(radius_m.is_finite() && radius_m > 0.0) {
            return Err(invalid("assessment radius must be positive"));
        }

        let misprediction_probability = file.misprediction.probability.unwrap_or(0.0);
        if !(0.0..=1.0).contains(&misprediction_probability) {
            return Err(invalid("misprediction probability must lie in [0,1]"));
        }

        let k_shortest = file.balancer.k_shortest.unwrap_or(3);
        if k_shortest < 1 {
            return Err(invalid("k_shortest must be at least 1"));
        }
        let occupancy_measure = match file.balancer.occupancy_measure.as_deref() {
            None | Some("key-link") => OccupancyMeasure::KeyLink,
            Some("whole-path") => OccupancyMeasure::WholePath,
            Some(other) => return Err(invalid(format!("unknown occupancy measure `{other}`"))),
        };

        let mut demand = Vec::new();
        for row in &file.demand {
            let nodes: Vec<NodeId> = row.route.iter().map(|n| NodeId::new(n.as_str())).collect();
            if nodes.len() < 2 {
                return Err(invalid(format!(
                    "demand `{}`: route needs at least 2 nodes",
                    row.name
                )));
            }
            let route = graph.node_path_to_links(&nodes)?;
            let spawning = match (&row.rate, &row.spawn_ticks) {
                (Some(rate), None) => {
                    if !(rate.is_finite() && (0.0..=1.0).contains(rate)) {
                        return Err(invalid(format!(
                            "demand `{}`: rate must lie in [0,1], got {rate}",
                            row.name
                        )));
                    }
                    Spawning::Rate {
                        rate: *rate,
                        start: row.start_tick.unwrap_or(0),
                        end: row.end_tick,
                    }
                }
                (None, Some(ticks)) => Spawning::Ticks(ticks.clone()),
                (Some(_), Some(_)) => {
                    return Err(invalid(format!(
                        "demand `{}`: give either rate or spawn_ticks, not both",
                        row.name
                    )))
                }
                (None, None) => {
                    return Err(invalid(format!(
                        "demand `{}`: missing rate or spawn_ticks",
                        row.name
                    )))
                }
            };
            demand.push(DemandRow {
                name: row.name.clone(),
                route,
                spawning,
            });
        }

        let mut events = Vec::new();
        for section in &file.events {
            let event = parse_event(&section.text).map_err(|source| ScenarioError::Event {
                tick: section.tick,
                source,
            })?;
            let event = match (event, overrides.capacity) {
                (Event::Open(mut open), Some(capacity)) => {
                    open.max_capacity = capacity;
                    Event::Open(open)
                }
                (event, _) => event,
            };
            let kind = match section.kind.as_deref() {
                None | Some("irregular") => ObstructionKind::Irregular,
                Some("regular") => ObstructionKind::Regular,
                Some(other) => return Err(invalid(format!("unknown obstruction kind `{other}`"))),
            };
            events.push(ScheduledEvent {
                tick: section.tick,
                event,
                kind,
                radius_m: section.radius_m,
            });
        }
        events.sort_by_key(|e| e.tick);

        // Event matching and radius gating are geometric; demand routes must
        // then be locatable.
        if !events.is_empty() {
            for node in graph.nodes() {
                if graph.coord(node).is_none() {
                    return Err(invalid(format!(
                        "scenarios with events need coordinates for every node; `{node}` has none"
                    )));
                }
            }
        }

        let mut alternative_overrides = BTreeMap::new();
        for section in &file.alternatives {
            if section.obstructed.len() != 2 {
                return Err(invalid("alternatives: `obstructed` must be [from, to]"));
            }
            let obstructed = LinkId::new(
                section.obstructed[0].as_str(),
                section.obstructed[1].as_str(),
            );
            if !graph.contains_link(&obstructed) {
                return Err(ScenarioError::Network(NetworkError::UnknownLink(
                    obstructed,
                )));
            }
            let mut routes = Vec::new();
            for route in &section.routes {
                let nodes: Vec<NodeId> = route.iter().map(|n| NodeId::new(n.as_str())).collect();
                let links = graph.node_path_to_links(&nodes)?;
                let Some(first) = links.first() else {
                    return Err(invalid("alternatives: route needs at least one link"));
                };
                routes.push(AlternativeRoute {
                    key_link: first.clone(),
                    path: links,
                });
            }
            let set = AlternativeSet::new(obstructed.clone(), routes)?;
            alternative_overrides.insert(obstructed, set);
        }

        Ok(Scenario {
            graph,
            mode,
            seed,
            duration_ticks,
            tick_seconds,
            alpha,
            fairness,
            prediction: PredictionConfig {
                horizon,
                root_policy,
            },
            damping,
            radius_m,
            misprediction_probability,
            k_shortest,
            occupancy_measure,
            demand,
            events,
            alternative_overrides,
        })
    }
}

fn resolve_path(base_dir: Option<&Path>, path: &str) -> std::path::PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        return p.to_path_buf();
    }
    match base_dir {
        Some(dir) => dir.join(p),
        None => p.to_path_buf(),
    }
}
