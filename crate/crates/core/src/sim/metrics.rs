//! Per-run telemetry and its CSV serialization.
//!
//! Four tables with fixed headers: `flows.csv` (vehicles per monitored route
//! per tick), `occupancy.csv` (vehicles per monitored link per tick),
//! `decisions.csv` (one row per route determination) and `allocations.csv`
//! (grant history updates for regular obstructions). All numeric formatting
//! is fixed so runs with equal seeds serialize byte-identically.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use crate::network::{LinkId, VehicleId};

#[derive(Debug, Clone, PartialEq)]
pub struct FlowRow {
    pub tick: u64,
    pub route: String,
    pub vehicles: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyRow {
    pub tick: u64,
    pub link: LinkId,
    pub occupancy: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRow {
    pub tick: u64,
    pub vehicle: VehicleId,
    pub p_allocation: f64,
    pub granted: bool,
    pub chosen_link: LinkId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationRow {
    pub tick: u64,
    pub vehicle: VehicleId,
    pub granted: bool,
    pub mean_allocation: f64,
}

/// Controller telemetry: the sampled occupancy and the emitted signal.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlRow {
    pub tick: u64,
    pub link: LinkId,
    pub occupancy: u32,
    pub error: i64,
    pub signal: f64,
}

/// Balancer telemetry: one row per alternative per controlled tick.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceRow {
    pub tick: u64,
    pub alternative: LinkId,
    pub occupancy: u32,
    pub probability: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsBundle {
    pub flows: Vec<FlowRow>,
    pub occupancy: Vec<OccupancyRow>,
    pub decisions: Vec<DecisionRow>,
    pub allocations: Vec<AllocationRow>,
    pub control: Vec<ControlRow>,
    pub balance: Vec<BalanceRow>,
}

impl MetricsBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn flows_csv(&self) -> String {
        let mut out = String::from("tick,route,vehicles\n");
        for r in &self.flows {
            let _ = writeln!(out, "{},{},{}", r.tick, r.route, r.vehicles);
        }
        out
    }

    pub fn occupancy_csv(&self) -> String {
        let mut out = String::from("tick,link,occupancy\n");
        for r in &self.occupancy {
            let _ = writeln!(out, "{},{},{}", r.tick, r.link, r.occupancy);
        }
        out
    }

    pub fn decisions_csv(&self) -> String {
        let mut out = String::from("tick,vehicle,p_allocation,granted,chosen_link\n");
        for r in &self.decisions {
            let _ = writeln!(
                out,
                "{},{},{:.6},{},{}",
                r.tick, r.vehicle, r.p_allocation, r.granted as u8, r.chosen_link
            );
        }
        out
    }

    pub fn allocations_csv(&self) -> String {
        let mut out = String::from("tick,vehicle,granted,mean_allocation\n");
        for r in &self.allocations {
            let _ = writeln!(
                out,
                "{},{},{},{:.6}",
                r.tick, r.vehicle, r.granted as u8, r.mean_allocation
            );
        }
        out
    }

    pub fn control_csv(&self) -> String {
        let mut out = String::from("tick,link,occupancy,error,signal\n");
        for r in &self.control {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6}",
                r.tick, r.link, r.occupancy, r.error, r.signal
            );
        }
        out
    }

    pub fn balance_csv(&self) -> String {
        let mut out = String::from("tick,alternative,occupancy,probability\n");
        for r in &self.balance {
            let _ = writeln!(
                out,
                "{},{},{},{:.6}",
                r.tick, r.alternative, r.occupancy, r.probability
            );
        }
        out
    }

    /// Writes the four standard tables plus the controller and balancer
    /// traces into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> io::Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("flows.csv"), self.flows_csv())?;
        fs::write(dir.join("occupancy.csv"), self.occupancy_csv())?;
        fs::write(dir.join("decisions.csv"), self.decisions_csv())?;
        fs::write(dir.join("allocations.csv"), self.allocations_csv())?;
        fs::write(dir.join("control.csv"), self.control_csv())?;
        fs::write(dir.join("balance.csv"), self.balance_csv())?;
        Ok(())
    }

    /// Occupancy samples of one link restricted to `[from, to)` ticks.
    pub fn occupancy_samples(&self, link: &LinkId, from: u64, to: u64) -> Vec<u32> {
        self.occupancy
            .iter()
            .filter(|r| &r.link == link && r.tick >= from && r.tick < to)
            .map(|r| r.occupancy)
            .collect()
    }

    pub fn mean_occupancy(&self, link: &LinkId, from: u64, to: u64) -> f64 {
        mean(&self.occupancy_samples(link, from, to))
    }

    /// Occupancy value at the q-quantile (0..=1) over `[from, to)`.
    pub fn percentile_occupancy(&self, link: &LinkId, q: f64, from: u64, to: u64) -> f64 {
        let mut samples = self.occupancy_samples(link, from, to);
        if samples.is_empty() {
            return 0.0;
        }
        samples.sort_unstable();
        let rank = ((samples.len() - 1) as f64 * q).round() as usize;
        samples[rank] as f64
    }

    /// Coefficient of variation of the per-link mean occupancies over
    /// `[from, to)`, across the given links.
    pub fn occupancy_cv(&self, links: &[LinkId], from: u64, to: u64) -> f64 {
        let means: Vec<f64> = links
            .iter()
            .map(|l| self.mean_occupancy(l, from, to))
            .collect();
        let m = means.iter().sum::<f64>() / means.len() as f64;
        if m == 0.0 {
            return 0.0;
        }
        let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / means.len() as f64;
        var.sqrt() / m
    }
}

fn mean(samples: &[u32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|&x| x as f64).sum::<f64>() / samples.len() as f64
}
