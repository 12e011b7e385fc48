//! Regular-obstruction numerical harness: the controller error is modeled
//! as a reflected integer random walk on `[0, c]`, the broadcast
//! coefficient evolves every tick, and vehicles compete for the link a few
//! times per period. No traffic plant is involved; re-routing on denial
//! does not affect the allocation statistics and is not emulated.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;

use crate::control::ControllerState;
use crate::determination::{allocation_probability, AllocationHistory, FairnessConfig, Phi};
use crate::network::{LinkId, VehicleId};
use crate::rng::stream;

use super::metrics::AllocationRow;
use super::SimError;

/// Configuration of the random-walk experiment.
#[derive(Debug, Clone)]
pub struct RandomWalkConfig {
    /// Walk gain: each tick the error moves by `round(beta * n)` with `n`
    /// standard normal. Zero freezes the error at its initial value.
    pub beta: f64,
    /// Capacity `c`; the walk is confined to `[0, c]`.
    pub capacity: u32,
    pub periods: u32,
    pub period_ticks: u64,
    pub requests_per_period: u32,
    pub vehicles: u32,
    pub seed: u64,
    /// Initial error; defaults to `c` (an empty link at activation).
    pub initial_error: Option<i64>,
}

impl Default for RandomWalkConfig {
    fn default() -> Self {
        RandomWalkConfig {
            beta: 0.35,
            capacity: 3,
            periods: 365,
            // One 16-hour period at one-second ticks.
            period_ticks: 16 * 3600,
            requests_per_period: 2,
            vehicles: 10,
            seed: 0,
            initial_error: None,
        }
    }
}

/// A harness experiment read from a TOML file: the walk parameters plus the
/// fairness shaping and smoothing coefficient.
#[derive(Debug, Clone)]
pub struct HarnessSpec {
    pub walk: RandomWalkConfig,
    pub fairness: FairnessConfig,
    pub alpha: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HarnessFile {
    seed: Option<u64>,
    capacity: Option<u32>,
    beta: Option<f64>,
    alpha: Option<f64>,
    periods: Option<u32>,
    period_ticks: Option<u64>,
    requests_per_period: Option<u32>,
    vehicles: Option<u32>,
    initial_error: Option<i64>,
    phi_coefficient: Option<f64>,
    phi_exponent: Option<f64>,
    h_cap: Option<f64>,
}

impl HarnessSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let file: HarnessFile =
            toml::from_str(text).map_err(|e| SimError::Harness(e.to_string()))?;
        let defaults = RandomWalkConfig::default();
        Ok(HarnessSpec {
            walk: RandomWalkConfig {
                beta: file.beta.unwrap_or(defaults.beta),
                capacity: file.capacity.unwrap_or(defaults.capacity),
                periods: file.periods.unwrap_or(defaults.periods),
                period_ticks: file.period_ticks.unwrap_or(defaults.period_ticks),
                requests_per_period: file
                    .requests_per_period
                    .unwrap_or(defaults.requests_per_period),
                vehicles: file.vehicles.unwrap_or(defaults.vehicles),
                seed: file.seed.unwrap_or(defaults.seed),
                initial_error: file.initial_error,
            },
            fairness: FairnessConfig {
                phi: Phi {
                    coefficient: file.phi_coefficient.unwrap_or(4.0),
                    exponent: file.phi_exponent.unwrap_or(3.0),
                },
                h_cap: file.h_cap.unwrap_or(1e6),
            },
            alpha: file.alpha.unwrap_or(0.1),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Harness(e.to_string()))?;
        Self::from_toml_str(&text)
    }

    pub fn run(&self) -> Result<HarnessOutput, SimError> {
        run_regular_harness(&self.walk, &self.fairness, self.alpha)
    }
}

/// Running-mean samples of one vehicle's allocation history, one sample per
/// request.
#[derive(Debug, Clone)]
pub struct AllocationTrace {
    pub vehicle: VehicleId,
    pub samples: Vec<(u64, f64)>,
}

#[derive(Debug)]
pub struct HarnessOutput {
    pub allocations: Vec<AllocationRow>,
    pub traces: Vec<AllocationTrace>,
    pub final_means: Vec<f64>,
    /// Time-average of the broadcast coefficient, as a diagnostic.
    pub mean_gamma: f64,
    pub ticks: u64,
}

pub fn run_regular_harness(
    config: &RandomWalkConfig,
    fairness: &FairnessConfig,
    alpha: f64,
) -> Result<HarnessOutput, SimError> {
    if config.capacity < 1 {
        return Err(SimError::Harness("capacity must be at least 1".into()));
    }
    if !(config.beta.is_finite() && config.beta >= 0.0) {
        return Err(SimError::Harness(
            "beta must be finite and nonnegative".into(),
        ));
    }
    if config.vehicles < 1 || config.periods < 1 || config.period_ticks < 1 {
        return Err(SimError::Harness(
            "vehicles, periods and period_ticks must be positive".into(),
        ));
    }
    let capacity = config.capacity as i64;
    let initial_error = config.initial_error.unwrap_or(capacity).clamp(0, capacity);

    // Request schedule: per vehicle, a fixed count of uniformly placed
    // requests per period, from a per-vehicle stream so vehicle sets can
    // grow without reshuffling anyone else.
    let mut schedule: Vec<(u64, usize)> = Vec::new();
    for v in 0..config.vehicles as usize {
        let mut rng = stream(config.seed, "schedule", &format!("veh-{v:02}"));
        for period in 0..config.periods as u64 {
            for _ in 0..config.requests_per_period {
                let offset = rng.gen_range(0..config.period_ticks);
                schedule.push((period * config.period_ticks + offset, v));
            }
        }
    }
    schedule.sort_unstable();

    let mut state = ControllerState::new(
        LinkId::new("l", "m"),
        config.capacity,
        (capacity - initial_error) as u32,
        alpha,
    )?;
    let mut walk_rng = stream(config.seed, "walk", "");
    let mut vehicle_rngs: Vec<_> = (0..config.vehicles as usize)
        .map(|v| stream(config.seed, "vehicle", &format!("veh-{v:02}")))
        .collect();
    let mut histories: Vec<AllocationHistory> = (0..config.vehicles)
        .map(|v| AllocationHistory::new(VehicleId::new(format!("veh-{v:02}"))))
        .collect();
    let mut traces: Vec<AllocationTrace> = histories
        .iter()
        .map(|h| AllocationTrace {
            vehicle: h.vehicle().clone(),
            samples: Vec::new(),
        })
        .collect();
    let mut allocations = Vec::with_capacity(schedule.len());

    let total_ticks = config.periods as u64 * config.period_ticks;
    let mut cursor = 0usize;
    let mut gamma_sum = 0.0;

    for tick in 0..total_ticks {
        // Requests due this tick compete against gamma(k).
        while cursor < schedule.len() && schedule[cursor].0 == tick {
            let (_, v) = schedule[cursor];
            cursor += 1;
            let p = allocation_probability(
                &crate::control::ControllerOutput::Broadcast(state.gamma()),
                &histories[v],
                fairness,
            );
            let granted = vehicle_rngs[v].gen::<f64>() < p;
            histories[v].record(granted);
            let mean = histories[v].mean();
            allocations.push(AllocationRow {
                tick,
                vehicle: histories[v].vehicle().clone(),
                granted,
                mean_allocation: mean,
            });
            traces[v].samples.push((tick, mean));
        }

        gamma_sum += state.gamma();
        // gamma(k+1) uses e(k); the walk then produces e(k+1).
        state.gamma_step();
        let noise: f64 = walk_rng.sample(StandardNormal);
        let step = (config.beta * noise).round() as i64;
        let error = (state.error() + step).clamp(0, capacity);
        state.observe_occupancy((capacity - error) as u32);
    }

    let final_means = histories.iter().map(|h| h.mean()).collect();
    Ok(HarnessOutput {
        allocations,
        traces,
        final_means,
        mean_gamma: gamma_sum / total_ticks as f64,
        ticks: total_ticks,
    })
}
