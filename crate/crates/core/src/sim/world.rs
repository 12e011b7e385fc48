//! The tick loop: spawning, link traversal, and the per-vehicle decision
//! chain around active obstructions.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::balancer::{balance, generate_alternatives, AlternativeSet, OccupancyMeasure};
use crate::control::{controller_output, ControllerState};
use crate::determination::{allocation_probability, decide_route, AllocationHistory};
use crate::engine::parse_route;
use crate::events::{match_link, Event, Obstruction, ObstructionKind, ObstructionRegistry};
use crate::network::{point_segment_distance_m, HistoryGraph, LinkId, OccupancyTable, VehicleId};
use crate::prediction::predict_route;
use crate::ranking::{rank_edges, EdgeRanks, RankingConfig};
use crate::rng::stream;

use super::metrics::{
    AllocationRow, BalanceRow, ControlRow, DecisionRow, FlowRow, MetricsBundle, OccupancyRow,
};
use super::scenario::{Scenario, SimMode, Spawning};
use super::SimError;

/// Floor for effective link speeds so a zero speed limit cannot produce an
/// infinite travel time.
const MIN_SPEED_MPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VehicleStatus {
    Driving,
    ReRouted,
    Finished,
}

#[derive(Debug)]
struct Vehicle {
    id: VehicleId,
    route: Vec<LinkId>,
    /// Index into `route` of the link currently being traversed.
    position: usize,
    remaining_ticks: u64,
    status: VehicleStatus,
    history: HistoryGraph,
    decision_rng: ChaCha8Rng,
    mispredict_rng: ChaCha8Rng,
    /// Per-obstruction flag: competed during the current pass through the
    /// assessment radius. Leaving the radius clears the flag.
    competed: BTreeMap<LinkId, bool>,
}

impl Vehicle {
    fn driving(&self) -> bool {
        matches!(
            self.status,
            VehicleStatus::Driving | VehicleStatus::ReRouted
        )
    }

    fn current_link(&self) -> &LinkId {
        &self.route[self.position]
    }
}

/// Result of a completed run.
#[derive(Debug)]
pub struct RunOutput {
    pub metrics: MetricsBundle,
    pub spawned: u64,
    pub finished: u64,
    pub ticks: u64,
}

struct ObstructionTickData {
    obstruction: Obstruction,
    alternatives: AlternativeSet,
    p_allocation_base: crate::control::ControllerOutput,
    balance: crate::balancer::BalanceVector,
}

/// The mutable simulation state.
pub struct World {
    scenario: Scenario,
    tick: u64,
    occupancy: OccupancyTable,
    vehicles: Vec<Vehicle>,
    registry: ObstructionRegistry,
    controllers: BTreeMap<LinkId, ControllerState>,
    alternative_sets: BTreeMap<LinkId, AlternativeSet>,
    ranks: Option<EdgeRanks>,
    monitored: Vec<LinkId>,
    demand_link_sets: Vec<BTreeSet<LinkId>>,
    allocation_histories: BTreeMap<VehicleId, AllocationHistory>,
    /// Precomputed (tick, demand index) spawn schedule, sorted.
    spawn_queue: Vec<(u64, usize)>,
    spawn_cursor: usize,
    event_cursor: usize,
    spawned: u64,
    finished: u64,
    metrics: MetricsBundle,
}

impl World {
    pub fn new(scenario: Scenario) -> Result<Self, SimError> {
        let ranks = if scenario.mode == SimMode::Controlled && !scenario.graph.is_empty() {
            let config = RankingConfig {
                damping: scenario.damping,
                ..RankingConfig::default()
            };
            Some(rank_edges(&scenario.graph, &config)?)
        } else {
            None
        };

        let spawn_queue = build_spawn_queue(&scenario);
        let demand_link_sets = scenario
            .demand
            .iter()
            .map(|row| row.route.iter().cloned().collect())
            .collect();

        // Alternative sets and the monitored-link list are fixed by the
        // event schedule, independent of mode, so baseline and controlled
        // runs emit comparable occupancy tables.
        let mut alternative_sets = BTreeMap::new();
        let mut monitored = BTreeSet::new();
        for scheduled in &scenario.events {
            if let Event::Open(open) = &scheduled.event {
                let link = match_link(&scenario.graph, open.latitude, open.longitude)?;
                let set = match scenario.alternative_overrides.get(&link) {
                    Some(set) => set.clone(),
                    None => generate_alternatives(&scenario.graph, &link, scenario.k_shortest)?,
                };
                monitored.insert(link.clone());
                for alt in set.alternatives() {
                    monitored.insert(alt.key_link.clone());
                }
                alternative_sets.insert(link, set);
            }
        }

        Ok(World {
            scenario,
            tick: 0,
            occupancy: OccupancyTable::new(),
            vehicles: Vec::new(),
            registry: ObstructionRegistry::new(),
            controllers: BTreeMap::new(),
            alternative_sets,
            ranks,
            monitored: monitored.into_iter().collect(),
            demand_link_sets,
            allocation_histories: BTreeMap::new(),
            spawn_queue,
            spawn_cursor: 0,
            event_cursor: 0,
            spawned: 0,
            finished: 0,
            metrics: MetricsBundle::new(),
        })
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn spawned(&self) -> u64 {
        self.spawned
    }

    pub fn finished(&self) -> u64 {
        self.finished
    }

    pub fn driving(&self) -> u64 {
        self.vehicles.iter().filter(|v| v.driving()).count() as u64
    }

    pub fn occupancy(&self) -> &OccupancyTable {
        &self.occupancy
    }

    pub fn registry(&self) -> &ObstructionRegistry {
        &self.registry
    }

    pub fn metrics(&self) -> &MetricsBundle {
        &self.metrics
    }

    /// Advances the world by one tick: events, spawns, movement, control,
    /// telemetry.
    pub fn step(&mut self) -> Result<(), SimError> {
        self.apply_scheduled_events()?;
        self.spawn_vehicles();
        self.move_vehicles();
        if self.scenario.mode == SimMode::Controlled && self.registry.has_active() {
            self.run_control_phase()?;
        }
        self.append_telemetry();
        debug_assert_eq!(self.spawned, self.driving() + self.finished);
        debug_assert_eq!(self.occupancy.total(), self.driving());
        self.tick += 1;
        self.occupancy.set_tick(self.tick);
        Ok(())
    }

    fn apply_scheduled_events(&mut self) -> Result<(), SimError> {
        while self.event_cursor < self.scenario.events.len()
            && self.scenario.events[self.event_cursor].tick == self.tick
        {
            let scheduled = &self.scenario.events[self.event_cursor];
            self.event_cursor += 1;
            if self.scenario.mode == SimMode::Baseline {
                continue;
            }
            match &scheduled.event {
                Event::Open(open) => {
                    let radius = scheduled.radius_m.unwrap_or(self.scenario.radius_m);
                    let obstruction = self.registry.apply_open(
                        open,
                        &self.scenario.graph,
                        scheduled.kind,
                        radius,
                    )?;
                    let link = obstruction.link.clone();
                    let capacity = obstruction.capacity;
                    let state = ControllerState::new(
                        link.clone(),
                        capacity,
                        self.occupancy.occupancy(&link),
                        self.scenario.alpha,
                    )?;
                    self.controllers.insert(link, state);
                }
                Event::Close(close) => {
                    let obstruction = self.registry.apply_close(close)?;
                    self.controllers.remove(&obstruction.link.clone());
                }
            }
        }
        Ok(())
    }

    fn spawn_vehicles(&mut self) {
        while self.spawn_cursor < self.spawn_queue.len()
            && self.spawn_queue[self.spawn_cursor].0 == self.tick
        {
            let (_, demand_idx) = self.spawn_queue[self.spawn_cursor];
            self.spawn_cursor += 1;
            self.spawned += 1;
            let id = VehicleId::new(format!("veh-{:06}", self.spawned));
            let route = self.scenario.demand[demand_idx].route.clone();
            let mut history = HistoryGraph::new(id.clone());
            history
                .record_trip(&self.scenario.graph, &route)
                .expect("demand routes were validated at load");
            let first = route[0].clone();
            let remaining_ticks = self.travel_ticks(&first);
            self.occupancy.enter(&first);
            let decision_rng = stream(self.scenario.seed, "decision", id.as_str());
            let mispredict_rng = stream(self.scenario.seed, "mispredict", id.as_str());
            self.vehicles.push(Vehicle {
                id,
                route,
                position: 0,
                remaining_ticks,
                status: VehicleStatus::Driving,
                history,
                decision_rng,
                mispredict_rng,
                competed: BTreeMap::new(),
            });
        }
    }

    /// Ticks a link takes to traverse at its current effective speed. An
    /// active obstruction's reduced limit applies to vehicles entering the
    /// link while it is active.
    fn travel_ticks(&self, link: &LinkId) -> u64 {
        let attrs = self
            .scenario
            .graph
            .link(link)
            .expect("routes reference graph links");
        let speed = match self.registry.active_on(link) {
            Some(o) => o.reduced_speed_mps(),
            None => attrs.free_speed_mps,
        }
        .max(MIN_SPEED_MPS);
        let ticks = (attrs.length_m / (speed * self.scenario.tick_seconds)).ceil();
        (ticks as u64).max(1)
    }

    fn move_vehicles(&mut self) {
        for i in 0..self.vehicles.len() {
            if !self.vehicles[i].driving() {
                continue;
            }
            self.vehicles[i].remaining_ticks -= 1;
            if self.vehicles[i].remaining_ticks > 0 {
                continue;
            }
            let current = self.vehicles[i].current_link().clone();
            self.occupancy.leave(&current);
            self.vehicles[i].position += 1;
            if self.vehicles[i].position == self.vehicles[i].route.len() {
                self.vehicles[i].status = VehicleStatus::Finished;
                self.finished += 1;
                continue;
            }
            let next = self.vehicles[i].current_link().clone();
            self.occupancy.enter(&next);
            self.vehicles[i].remaining_ticks = self.travel_ticks(&next);
        }
    }

    /// Distance from the vehicle's approach node (the head of its current
    /// link) to the obstructed segment.
    fn within_radius(&self, vehicle: &Vehicle, obstruction: &Obstruction) -> bool {
        let graph = &self.scenario.graph;
        let Some(point) = graph.coord(&vehicle.current_link().to) else {
            return true;
        };
        let Ok((a, b)) = graph.link_coords(&obstruction.link) else {
            return true;
        };
        point_segment_distance_m(point, &a, &b) <= obstruction.radius_m
    }

    fn run_control_phase(&mut self) -> Result<(), SimError> {
        // One controller output and one balance vector per obstruction per
        // tick: every vehicle deciding this tick sees the same snapshot.
        let mut tick_data: BTreeMap<LinkId, ObstructionTickData> = BTreeMap::new();
        let active: Vec<Obstruction> = self.registry.active().cloned().collect();
        for obstruction in active {
            let link = obstruction.link.clone();
            let x = self.occupancy.occupancy(&link);
            let controller = self
                .controllers
                .get_mut(&link)
                .expect("every active obstruction has a controller");
            controller.observe_occupancy(x);
            let output = controller_output(controller, &obstruction)?;
            let alternatives = self
                .alternative_sets
                .get(&link)
                .expect("alternative sets were prepared for every scheduled obstruction")
                .clone();
            let occupancies: Vec<u32> = alternatives
                .alternatives()
                .iter()
                .map(|alt| match self.scenario.occupancy_measure {
                    OccupancyMeasure::KeyLink => self.occupancy.occupancy(&alt.key_link),
                    OccupancyMeasure::WholePath => {
                        alt.path.iter().map(|l| self.occupancy.occupancy(l)).sum()
                    }
                })
                .collect();
            let vector = balance(&alternatives, &occupancies, self.tick)?;
            for ((alt, &x), &p) in alternatives
                .alternatives()
                .iter()
                .zip(&occupancies)
                .zip(&vector.probabilities)
            {
                self.metrics.balance.push(BalanceRow {
                    tick: self.tick,
                    alternative: alt.key_link.clone(),
                    occupancy: x,
                    probability: p,
                });
            }
            self.metrics.control.push(ControlRow {
                tick: self.tick,
                link: link.clone(),
                occupancy: x,
                error: controller.error(),
                signal: output.value(),
            });
            tick_data.insert(
                link,
                ObstructionTickData {
                    obstruction,
                    alternatives,
                    p_allocation_base: output,
                    balance: vector,
                },
            );
        }

        let ranks = self
            .ranks
            .as_ref()
            .expect("controlled mode ranks the graph");
        for i in 0..self.vehicles.len() {
            if !self.vehicles[i].driving() {
                continue;
            }

            // Track radius membership per obstruction; leaving the radius
            // re-arms the vehicle for its next pass.
            let mut inside_any = false;
            for data in tick_data.values() {
                let inside = self.within_radius(&self.vehicles[i], &data.obstruction);
                if !inside {
                    self.vehicles[i]
                        .competed
                        .insert(data.obstruction.link.clone(), false);
                }
                inside_any |= inside;
            }
            if !inside_any {
                continue;
            }

            let root = self
                .scenario
                .prediction
                .root_policy
                .root_of(self.vehicles[i].current_link());
            let predicted = predict_route(
                &self.vehicles[i].history,
                &self.scenario.graph,
                ranks,
                &root,
                &self.scenario.prediction,
            );
            let verdict = parse_route(&predicted, &self.registry);
            let Some(obstruction) = verdict.obstruction else {
                continue;
            };
            let data = &tick_data[&obstruction.link];
            if !self.within_radius(&self.vehicles[i], &obstruction) {
                continue;
            }
            if *self.vehicles[i]
                .competed
                .get(&obstruction.link)
                .unwrap_or(&false)
            {
                continue;
            }
            if self.vehicles[i].current_link() == &obstruction.link {
                continue;
            }
            // The obstructed link must still lie ahead on the actual route.
            let position = self.vehicles[i].position;
            let Some(offset) = self.vehicles[i].route[position + 1..]
                .iter()
                .position(|l| l == &obstruction.link)
            else {
                continue;
            };
            let splice_at = position + 1 + offset;

            self.vehicles[i]
                .competed
                .insert(obstruction.link.clone(), true);

            // A mispredicting vehicle never consults the remote service; it
            // stays on its route as if it had been granted access.
            let mispredicts = self.vehicles[i].mispredict_rng.gen::<f64>()
                < self.scenario.misprediction_probability;
            if mispredicts {
                continue;
            }

            let vehicle_id = self.vehicles[i].id.clone();
            let history = self
                .allocation_histories
                .entry(vehicle_id.clone())
                .or_insert_with(|| AllocationHistory::new(vehicle_id.clone()));
            let p_allocation =
                allocation_probability(&data.p_allocation_base, history, &self.scenario.fairness);
            let decision = decide_route(
                &vehicle_id,
                p_allocation,
                &data.alternatives,
                &data.balance,
                &mut self.vehicles[i].decision_rng,
            );
            self.metrics.decisions.push(DecisionRow {
                tick: self.tick,
                vehicle: vehicle_id.clone(),
                p_allocation,
                granted: decision.granted,
                chosen_link: decision.chosen_link.clone(),
            });
            if data.obstruction.kind == ObstructionKind::Regular {
                history.record(decision.granted);
                self.metrics.allocations.push(AllocationRow {
                    tick: self.tick,
                    vehicle: vehicle_id.clone(),
                    granted: decision.granted,
                    mean_allocation: history.mean(),
                });
            }

            if let Some(index) = decision.alternative {
                let path = data.alternatives.alternatives()[index].path.clone();
                let vehicle = &mut self.vehicles[i];
                let mut route = vehicle.route[..splice_at].to_vec();
                route.extend(path);
                route.extend_from_slice(&vehicle.route[splice_at + 1..]);
                vehicle.route = route;
                vehicle.status = VehicleStatus::ReRouted;
                // The in-car system now predicts along the updated plan.
                let mut history = HistoryGraph::new(vehicle.id.clone());
                history
                    .record_trip(&self.scenario.graph, &vehicle.route[vehicle.position..])
                    .expect("spliced routes stay connected");
                vehicle.history = history;
            }
        }
        Ok(())
    }

    fn append_telemetry(&mut self) {
        for (idx, row) in self.scenario.demand.iter().enumerate() {
            let count = self
                .vehicles
                .iter()
                .filter(|v| v.driving() && self.demand_link_sets[idx].contains(v.current_link()))
                .count() as u32;
            self.metrics.flows.push(FlowRow {
                tick: self.tick,
                route: row.name.clone(),
                vehicles: count,
            });
        }
        for link in &self.monitored {
            self.metrics.occupancy.push(OccupancyRow {
                tick: self.tick,
                link: link.clone(),
                occupancy: self.occupancy.occupancy(link),
            });
        }
    }

    pub fn into_output(self) -> RunOutput {
        RunOutput {
            metrics: self.metrics,
            spawned: self.spawned,
            finished: self.finished,
            ticks: self.tick,
        }
    }
}

fn build_spawn_queue(scenario: &Scenario) -> Vec<(u64, usize)> {
    let mut queue = Vec::new();
    for (idx, row) in scenario.demand.iter().enumerate() {
        match &row.spawning {
            Spawning::Rate { rate, start, end } => {
                let mut rng = stream(scenario.seed, "demand", &row.name);
                let end = end.unwrap_or(scenario.duration_ticks);
                for tick in *start..end.min(scenario.duration_ticks) {
                    if rng.gen::<f64>() < *rate {
                        queue.push((tick, idx));
                    }
                }
            }
            Spawning::Ticks(ticks) => {
                for &tick in ticks {
                    if tick < scenario.duration_ticks {
                        queue.push((tick, idx));
                    }
                }
            }
        }
    }
    queue.sort();
    queue
}

/// Runs a scenario to its configured duration.
pub fn run_scenario(scenario: Scenario) -> Result<RunOutput, SimError> {
    let duration = scenario.duration_ticks;
    let mut world = World::new(scenario)?;
    for _ in 0..duration {
        world.step()?;
    }
    Ok(world.into_output())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::ScenarioOverrides;

    fn scenario(text: &str) -> Scenario {
        Scenario::from_toml_str(text, None, &ScenarioOverrides::default()).unwrap()
    }

    const TWO_LINK: &str = r#"
duration_ticks = 40
mode = "baseline"
network_text = """
a b 100 10 30
b c 100 5 30
"""

[[demand]]
name = "A"
route = ["a", "b", "c"]
spawn_ticks = [0]
"#;

    #[test]
    fn empty_demand_keeps_network_empty() {
        let s = scenario(
            r#"
duration_ticks = 20
mode = "baseline"
network_text = """
a b 100 10 30
"""
"#,
        );
        let out = run_scenario(s).unwrap();
        assert_eq!(out.spawned, 0);
        assert_eq!(out.finished, 0);
        assert!(out.metrics.decisions.is_empty());
    }

    #[test]
    fn travel_time_is_sum_of_link_times() {
        // 100m at 10 m/s = 10 ticks; 100m at 5 m/s = 20 ticks.
        let s = scenario(TWO_LINK);
        let mut world = World::new(s).unwrap();
        for _ in 0..29 {
            world.step().unwrap();
        }
        assert_eq!(world.finished(), 0);
        world.step().unwrap();
        assert_eq!(world.finished(), 1);
        assert_eq!(world.occupancy().total(), 0);
    }

    #[test]
    fn conservation_holds_every_tick() {
        let s = scenario(
            r#"
duration_ticks = 200
mode = "baseline"
network_text = """
a b 100 10 30
b c 100 5 30
"""

[[demand]]
name = "A"
route = ["a", "b", "c"]
rate = 0.3
"#,
        );
        let mut world = World::new(s).unwrap();
        for _ in 0..200 {
            world.step().unwrap();
            assert_eq!(world.spawned(), world.driving() + world.finished());
            assert_eq!(world.occupancy().total(), world.driving());
        }
        assert!(world.spawned() > 0);
    }

    #[test]
    fn identical_seeds_give_identical_metrics() {
        let text = r#"
duration_ticks = 300
seed = 11
network_text = """
o j 200 10 30
j m 100 10 30
j b 100 10 30
b m 100 10 30
j c 100 10 30
c m 100 10 30
m d 100 10 30
"""
nodes_text = """
o 53.3223 -6.3096
j 53.3223 -6.3066
m 53.3223 -6.3051
b 53.3232 -6.3058
c 53.3214 -6.3058
d 53.3223 -6.3036
"""

[[demand]]
name = "A"
route = ["o", "j", "m", "d"]
rate = 0.2

[[events]]
tick = 0
text = "New road incident: Mid. LatLon: 53.322300,-6.305850. Maxcapacity: 3. Maxspeed: 1.5 [km/h]. Time: 2017-05-01T10:00:00Z."
"#;
        let a = run_scenario(scenario(text)).unwrap();
        let b = run_scenario(scenario(text)).unwrap();
        assert_eq!(a.metrics.flows_csv(), b.metrics.flows_csv());
        assert_eq!(a.metrics.occupancy_csv(), b.metrics.occupancy_csv());
        assert_eq!(a.metrics.decisions_csv(), b.metrics.decisions_csv());
        assert_eq!(a.metrics.allocations_csv(), b.metrics.allocations_csv());
        assert!(!a.metrics.decisions.is_empty(), "control loop must engage");
    }

    #[test]
    fn uncontrolled_obstruction_congests_the_link() {
        let text = r#"
duration_ticks = 1200
mode = "uncontrolled"
seed = 5
network_text = """
o j 200 10 30
j m 100 10 30
j b 100 10 30
b m 100 10 30
m d 100 10 30
"""
nodes_text = """
o 53.3223 -6.3096
j 53.3223 -6.3066
m 53.3223 -6.3051
b 53.3232 -6.3058
d 53.3223 -6.3036
"""

[[demand]]
name = "A"
route = ["o", "j", "m", "d"]
rate = 0.1

[[events]]
tick = 0
text = "New road incident: Mid. LatLon: 53.322300,-6.305850. Maxcapacity: 3. Maxspeed: 1.5 [km/h]. Time: 2017-05-01T10:00:00Z."
"#;
        let out = run_scenario(scenario(text)).unwrap();
        let jm = LinkId::new("j", "m");
        // 0.1 veh/tick entering a 240-tick link: far above the capacity 3.
        let mean = out.metrics.mean_occupancy(&jm, 600, 1200);
        assert!(mean > 6.0, "uncontrolled mean {mean}");
        // No decisions happen without the controller.
        assert!(out.metrics.decisions.is_empty());

        // The same demand with the event suppressed flows freely, so the
        // obstruction is what saturates the link.
        let baseline = run_scenario(scenario(&text.replace(
            "mode = \"uncontrolled\"",
            "mode = \"baseline\"",
        )))
        .unwrap();
        let baseline_mean = baseline.metrics.mean_occupancy(&jm, 600, 1200);
        assert!(
            baseline_mean < 2.0 && mean > 3.0 * baseline_mean,
            "baseline mean {baseline_mean} vs uncontrolled {mean}"
        );
    }

    #[test]
    fn regular_obstruction_updates_allocation_histories() {
        let text = r#"
duration_ticks = 2400
mode = "controlled"
seed = 5
network_text = """
o j 200 10 30
j m 100 10 30
j b 100 10 30
b m 100 10 30
m d 100 10 30
"""
nodes_text = """
o 53.3223 -6.3096
j 53.3223 -6.3066
m 53.3223 -6.3051
b 53.3232 -6.3058
d 53.3223 -6.3036
"""

[[demand]]
name = "A"
route = ["o", "j", "m", "d"]
rate = 0.05

[[events]]
tick = 0
kind = "regular"
text = "New road incident: Mid. LatLon: 53.322300,-6.305850. Maxcapacity: 3. Maxspeed: 1.5 [km/h]. Time: 2017-05-01T10:00:00Z."
"#;
        let out = run_scenario(scenario(text)).unwrap();
        assert!(!out.metrics.decisions.is_empty());
        // Regular kind: every decision lands in the allocation table with
        // a freshly updated running mean.
        assert_eq!(out.metrics.allocations.len(), out.metrics.decisions.len());
        for row in &out.metrics.allocations {
            assert!((0.0..=1.0).contains(&row.mean_allocation));
        }
        // The broadcast coefficient is logged as the controller signal and
        // stays inside [0,1].
        for row in &out.metrics.control {
            assert!((0.0..=1.0).contains(&row.signal));
        }
    }

    #[test]
    fn grants_match_analytic_binomial_mean() {
        // Single junction: every decision is an independent Bernoulli toss
        // against the recorded p_allocation, so the total grant count must
        // sit within 3 sigma of the summed probabilities.
        let text = r#"
duration_ticks = 4000
mode = "controlled"
seed = 13
network_text = """
o j 100 10 30
j m 100 10 30
j b 100 10 30
b m 100 10 30
m d 100 10 30
"""
nodes_text = """
o 53.3223 -6.3096
j 53.3223 -6.3066
m 53.3223 -6.3051
b 53.3232 -6.3058
d 53.3223 -6.3036
"""

[[demand]]
name = "A"
route = ["o", "j", "m", "d"]
rate = 0.08

[[events]]
tick = 0
text = "New road incident: Mid. LatLon: 53.322300,-6.305850. Maxcapacity: 3. Maxspeed: 1.5 [km/h]. Time: 2017-05-01T10:00:00Z."
"#;
        let out = run_scenario(scenario(text)).unwrap();
        assert!(out.metrics.decisions.len() > 100);
        let grants: f64 = out.metrics.decisions.iter().filter(|d| d.granted).count() as f64;
        let expected: f64 = out.metrics.decisions.iter().map(|d| d.p_allocation).sum();
        let variance: f64 = out
            .metrics
            .decisions
            .iter()
            .map(|d| d.p_allocation * (1.0 - d.p_allocation))
            .sum();
        let sigma = variance.sqrt();
        assert!(
            (grants - expected).abs() <= 3.0 * sigma,
            "grants {grants} vs expected {expected} (3 sigma = {})",
            3.0 * sigma
        );
    }

    #[test]
    fn controlled_obstruction_respects_capacity_bound() {
        let text = r#"
duration_ticks = 2400
mode = "controlled"
seed = 5
network_text = """
o j 200 10 30
j m 100 10 30
j b 100 10 30
b m 100 10 30
m d 100 10 30
"""
nodes_text = """
o 53.3223 -6.3096
j 53.3223 -6.3066
m 53.3223 -6.3051
b 53.3232 -6.3058
d 53.3223 -6.3036
"""

[[demand]]
name = "A"
route = ["o", "j", "m", "d"]
rate = 0.05

[[events]]
tick = 0
text = "New road incident: Mid. LatLon: 53.322300,-6.305850. Maxcapacity: 3. Maxspeed: 1.5 [km/h]. Time: 2017-05-01T10:00:00Z."
"#;
        let out = run_scenario(scenario(text)).unwrap();
        let jm = LinkId::new("j", "m");
        let mean = out.metrics.mean_occupancy(&jm, 1200, 2400);
        assert!(mean <= 3.0, "controlled mean {mean}");
        assert!(!out.metrics.decisions.is_empty());
        // Some vehicles were denied and re-routed through (j,b).
        assert!(out.metrics.decisions.iter().any(|d| !d.granted));
    }

    #[test]
    fn closing_an_obstruction_stops_control_and_restores_speed() {
        let text = r#"
duration_ticks = 2400
mode = "controlled"
seed = 5
network_text = """
o j 200 10 30
j m 100 10 30
j b 100 10 30
b m 100 10 30
m d 100 10 30
"""
nodes_text = """
o 53.3223 -6.3096
j 53.3223 -6.3066
m 53.3223 -6.3051
b 53.3232 -6.3058
d 53.3223 -6.3036
"""

[[demand]]
name = "A"
route = ["o", "j", "m", "d"]
rate = 0.05

[[events]]
tick = 0
text = "New road incident: Mid. LatLon: 53.322300,-6.305850. Maxcapacity: 3. Maxspeed: 1.5 [km/h]. Time: 2017-05-01T10:00:00Z."

[[events]]
tick = 1200
text = "Road incident closed: Mid. Time: 2017-05-01T14:00:00Z."
"#;
        let mut world = World::new(scenario(text)).unwrap();
        for _ in 0..2400 {
            world.step().unwrap();
        }
        assert!(!world.registry().has_active());
        let archived = &world.registry().all()[0];
        assert!(!archived.active);
        assert!(archived.closed_at.is_some());

        let metrics = world.metrics();
        assert!(metrics.decisions.iter().any(|d| d.tick < 1200));
        assert!(metrics.decisions.iter().all(|d| d.tick < 1200));
        assert!(metrics.control.iter().all(|c| c.tick < 1200));
        // Free flow resumes: 0.05 veh/tick over a 10-tick link settles near
        // 0.5, far below the controlled level.
        let jm = LinkId::new("j", "m");
        let after = metrics.mean_occupancy(&jm, 1800, 2400);
        assert!(after < 1.0, "post-close mean {after}");
    }

    #[test]
    fn two_obstructions_run_independent_controllers() {
        // Obstructions on (j,m) and (m,d); the detours are j->b->m and
        // m->g->d. A vehicle denied at the first obstruction can still
        // compete at the second.
        let text = r#"
duration_ticks = 2000
mode = "controlled"
seed = 3
network_text = """
o j 200 10 30
j m 100 10 30
j b 100 10 30
b m 100 10 30
m d 100 10 30
m g 100 10 30
g d 100 10 30
d z 100 10 30
"""
nodes_text = """
o 53.3223 -6.3096
j 53.3223 -6.3066
m 53.3223 -6.3051
b 53.3232 -6.3058
d 53.3223 -6.3036
g 53.3232 -6.3043
z 53.3223 -6.3021
"""

[[demand]]
name = "A"
route = ["o", "j", "m", "d", "z"]
rate = 0.05

[[events]]
tick = 0
text = "New road incident: First. LatLon: 53.322300,-6.305850. Maxcapacity: 3. Maxspeed: 1.5 [km/h]. Time: 2017-05-01T10:00:00Z."

[[events]]
tick = 0
text = "New road incident: Second. LatLon: 53.322300,-6.304345. Maxcapacity: 3. Maxspeed: 1.5 [km/h]. Time: 2017-05-01T10:00:00Z."
"#;
        let out = run_scenario(scenario(text)).unwrap();
        let jm = LinkId::new("j", "m");
        let md = LinkId::new("m", "d");
        // Controller telemetry runs per obstruction per tick.
        assert!(out.metrics.control.iter().any(|c| c.link == jm));
        assert!(out.metrics.control.iter().any(|c| c.link == md));
        // Decisions happen at both obstructions, including for the same
        // vehicle at two distinct links.
        let first: std::collections::BTreeSet<_> = out
            .metrics
            .decisions
            .iter()
            .filter(|d| d.chosen_link == jm || d.chosen_link == LinkId::new("j", "b"))
            .map(|d| d.vehicle.clone())
            .collect();
        let second: std::collections::BTreeSet<_> = out
            .metrics
            .decisions
            .iter()
            .filter(|d| d.chosen_link == md || d.chosen_link == LinkId::new("m", "g"))
            .map(|d| d.vehicle.clone())
            .collect();
        assert!(!first.is_empty() && !second.is_empty());
        assert!(
            first.intersection(&second).next().is_some(),
            "some vehicle should compete at both obstructions"
        );
    }

    #[test]
    fn whole_path_measure_counts_downstream_legs() {
        // Background vehicles sit on the second detour leg (b,m). The key
        // link (j,b) itself stays empty, so only the whole-path measure can
        // see that load.
        let base = r#"
duration_ticks = 1200
mode = "controlled"
seed = 9
network_text = """
o j 200 10 30
j m 100 10 30
j b 100 10 30
b m 400 5 30
m d 100 10 30
"""
nodes_text = """
o 53.3223 -6.3096
j 53.3223 -6.3066
m 53.3223 -6.3051
b 53.3232 -6.3058
d 53.3223 -6.3036
"""

[[demand]]
name = "A"
route = ["o", "j", "m", "d"]
rate = 0.05

[[demand]]
name = "BG"
route = ["b", "m", "d"]
rate = 0.1

[[events]]
tick = 0
text = "New road incident: Mid. LatLon: 53.322300,-6.305850. Maxcapacity: 3. Maxspeed: 1.5 [km/h]. Time: 2017-05-01T10:00:00Z."
"#;
        let key_link = run_scenario(scenario(base)).unwrap();
        let whole_path = run_scenario(scenario(&format!(
            "{base}\n[balancer]\noccupancy_measure = \"whole-path\"\n"
        )))
        .unwrap();
        let reported = |out: &RunOutput| {
            let rows: Vec<&BalanceRow> = out
                .metrics
                .balance
                .iter()
                .filter(|r| r.alternative == LinkId::new("j", "b"))
                .collect();
            rows.iter().map(|r| r.occupancy as f64).sum::<f64>() / rows.len() as f64
        };
        let key_mean = reported(&key_link);
        let whole_mean = reported(&whole_path);
        assert!(
            whole_mean > key_mean + 1.0,
            "whole-path {whole_mean} vs key-link {key_mean}"
        );
    }

    #[test]
    fn rate_demand_respects_tick_window() {
        let s = scenario(
            r#"
duration_ticks = 20
mode = "baseline"
network_text = """
a b 100 10 30
"""

[[demand]]
name = "A"
route = ["a", "b"]
rate = 1.0
start_tick = 5
end_tick = 8
"#,
        );
        let mut world = World::new(s).unwrap();
        for _ in 0..20 {
            world.step().unwrap();
        }
        // Rate 1.0 spawns every tick inside [5, 8).
        assert_eq!(world.spawned(), 3);
    }
}
