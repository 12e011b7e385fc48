//! Route determination: the per-vehicle coin tosses against the controller
//! and balancer outputs, with the fairness weighting applied to regular
//! obstructions.

use rand::Rng;

use crate::balancer::{AlternativeSet, BalanceVector};
use crate::control::ControllerOutput;
use crate::network::{LinkId, VehicleId};

/// A vehicle's grant history for a regular obstruction.
///
/// Every competition appends a 1 (granted the obstructed link) or a 0
/// (re-routed). A fresh history is seeded with a single granted entry:
/// an all-zero average would make the fairness weight unbounded, and the
/// seed washes out of the running mean after a few requests.
#[derive(Debug, Clone)]
pub struct AllocationHistory {
    vehicle: VehicleId,
    grants: Vec<bool>,
}

impl AllocationHistory {
    pub fn new(vehicle: VehicleId) -> Self {
        AllocationHistory {
            vehicle,
            grants: vec![true],
        }
    }

    pub fn vehicle(&self) -> &VehicleId {
        &self.vehicle
    }

    pub fn grants(&self) -> &[bool] {
        &self.grants
    }

    pub fn len(&self) -> usize {
        self.grants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grants.is_empty()
    }

    /// Running mean of the grant sequence.
    pub fn mean(&self) -> f64 {
        let ones = self.grants.iter().filter(|&&g| g).count();
        ones as f64 / self.grants.len() as f64
    }

    /// Appends one outcome.
    pub fn record(&mut self, granted: bool) {
        self.grants.push(granted);
    }
}

/// Appends one outcome and returns the updated mean.
pub fn update_history(history: &mut AllocationHistory, granted: bool) -> f64 {
    history.record(granted);
    history.mean()
}

/// The fairness shaping function: a power law `phi(z) = a * z^b`, strictly
/// increasing on (0,1] for positive coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phi {
    pub coefficient: f64,
    pub exponent: f64,
}

impl Default for Phi {
    fn default() -> Self {
        Phi {
            coefficient: 4.0,
            exponent: 3.0,
        }
    }
}

impl Phi {
    pub fn eval(&self, z: f64) -> f64 {
        self.coefficient * z.powf(self.exponent)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FairnessConfig {
    pub phi: Phi,
    /// Upper bound on the fairness weight, guarding the small-mean blowup.
    pub h_cap: f64,
}

impl Default for FairnessConfig {
    fn default() -> Self {
        FairnessConfig {
            phi: Phi::default(),
            h_cap: 1e6,
        }
    }
}

/// Fairness weight `H = mean / phi(mean)`, capped. Decreasing in the mean
/// for super-linear `phi`, so vehicles that were granted less in the past
/// weigh more now.
pub fn history_weight(history: &AllocationHistory, config: &FairnessConfig) -> f64 {
    let mean = history.mean();
    if mean <= 0.0 {
        return config.h_cap;
    }
    (mean / config.phi.eval(mean)).min(config.h_cap)
}

/// The probability the vehicle is granted the obstructed link.
///
/// Irregular obstructions pass the admission probability through; regular
/// ones scale the broadcast coefficient by the vehicle's fairness weight,
/// clamped to 1 because it feeds a coin toss.
pub fn allocation_probability(
    output: &ControllerOutput,
    history: &AllocationHistory,
    config: &FairnessConfig,
) -> f64 {
    match output {
        ControllerOutput::Admission(p) => *p,
        ControllerOutput::Broadcast(gamma) => (gamma * history_weight(history, config)).min(1.0),
    }
}

/// The route assigned to one vehicle by the coin-toss cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteDecision {
    pub vehicle: VehicleId,
    pub chosen_link: LinkId,
    /// Index into the alternative set; `None` when the obstructed link was
    /// granted.
    pub alternative: Option<usize>,
    pub granted: bool,
    pub rng_draws: u32,
}

/// Tosses the coins of the route determination: first against the
/// allocation probability, then (only if denied) against the balance
/// vector to pick an alternative.
pub fn decide_route(
    vehicle: &VehicleId,
    p_allocation: f64,
    alternatives: &AlternativeSet,
    balance: &BalanceVector,
    rng: &mut impl Rng,
) -> RouteDecision {
    let first: f64 = rng.gen();
    if first < p_allocation {
        return RouteDecision {
            vehicle: vehicle.clone(),
            chosen_link: alternatives.obstructed().clone(),
            alternative: None,
            granted: true,
            rng_draws: 1,
        };
    }
    let second: f64 = rng.gen();
    let index = balance.sample(second);
    RouteDecision {
        vehicle: vehicle.clone(),
        chosen_link: alternatives.alternatives()[index].key_link.clone(),
        alternative: Some(index),
        granted: false,
        rng_draws: 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::balancer::{balance, AlternativeRoute};
    use crate::rng::stream;

    fn history_with(grants: &[bool]) -> AllocationHistory {
        let mut h = AllocationHistory::new(VehicleId::new("v"));
        h.grants.clear();
        h.grants.extend_from_slice(grants);
        h
    }

    #[test]
    fn fresh_history_is_seeded_granted() {
        let h = AllocationHistory::new(VehicleId::new("v"));
        assert_eq!(h.grants(), &[true]);
        assert_eq!(h.mean(), 1.0);
    }

    #[test]
    fn update_recomputes_mean_exactly() {
        let mut h = history_with(&[true]);
        assert_eq!(update_history(&mut h, false), 0.5);

        let mut h = history_with(&[true, false, false, true]);
        assert_eq!(update_history(&mut h, true), 0.6);
    }

    #[test]
    fn mean_equals_brute_force_recount() {
        let mut h = AllocationHistory::new(VehicleId::new("v"));
        let pattern = [true, false, false, true, true, false, true];
        for (i, g) in pattern.iter().cycle().take(200).enumerate() {
            h.record(*g);
            let ones = h.grants().iter().filter(|&&x| x).count();
            assert_eq!(h.mean(), ones as f64 / (i + 2) as f64);
        }
    }

    #[test]
    fn weight_at_half_mean_is_one() {
        // mean 0.5, phi(z)=4z^3: H = 0.5 / (4 * 0.125) = 1.
        let h = history_with(&[true, false]);
        let w = history_weight(&h, &FairnessConfig::default());
        assert!((w - 1.0).abs() < 1e-15);
    }

    #[test]
    fn weight_at_full_mean_is_quarter() {
        let h = history_with(&[true]);
        let w = history_weight(&h, &FairnessConfig::default());
        assert!((w - 0.25).abs() < 1e-15);
    }

    #[test]
    fn weight_is_capped_near_zero_mean() {
        let mut grants = vec![true];
        grants.extend(std::iter::repeat_n(false, 5000));
        let h = history_with(&grants);
        let config = FairnessConfig {
            h_cap: 100.0,
            ..FairnessConfig::default()
        };
        assert_eq!(history_weight(&h, &config), 100.0);
    }

    #[test]
    fn irregular_probability_passes_through() {
        let h = AllocationHistory::new(VehicleId::new("v"));
        let p = allocation_probability(
            &ControllerOutput::Admission(0.25),
            &h,
            &FairnessConfig::default(),
        );
        assert_eq!(p, 0.25);
    }

    #[test]
    fn regular_probability_scales_by_weight() {
        // gamma=0.5 with mean 0.5 (H=1) gives 0.5.
        let h = history_with(&[true, false]);
        let p = allocation_probability(
            &ControllerOutput::Broadcast(0.5),
            &h,
            &FairnessConfig::default(),
        );
        assert!((p - 0.5).abs() < 1e-15);
    }

    #[test]
    fn regular_probability_clamps_at_one() {
        // mean 0.2: H = 1/(4*0.04) = 6.25; 0.9*6.25 clamps to 1.
        let h = history_with(&[true, false, false, false, false]);
        let p = allocation_probability(
            &ControllerOutput::Broadcast(0.9),
            &h,
            &FairnessConfig::default(),
        );
        assert_eq!(p, 1.0);
    }

    #[test]
    fn lower_mean_gets_strictly_higher_probability() {
        let config = FairnessConfig::default();
        let low = history_with(&[true, false, false, false, false]); // 0.2
        let high = history_with(&[true, true, true, false]); // 0.75
        let gamma = ControllerOutput::Broadcast(0.3);
        let p_low = allocation_probability(&gamma, &low, &config);
        let p_high = allocation_probability(&gamma, &high, &config);
        assert!(p_low > p_high);
    }

    fn alt_set(n: usize) -> AlternativeSet {
        let alternatives = (0..n)
            .map(|i| {
                let key = LinkId::new("j", format!("x{i}"));
                AlternativeRoute {
                    key_link: key.clone(),
                    path: vec![key],
                }
            })
            .collect();
        AlternativeSet::new(LinkId::new("j", "m"), alternatives).unwrap()
    }

    #[test]
    fn certain_allocation_needs_one_draw() {
        let set = alt_set(2);
        let bal = balance(&set, &[1, 1], 0).unwrap();
        let mut rng = stream(1, "test", "v");
        for _ in 0..50 {
            let d = decide_route(&VehicleId::new("v"), 1.0, &set, &bal, &mut rng);
            assert!(d.granted);
            assert_eq!(d.rng_draws, 1);
            assert_eq!(d.chosen_link, LinkId::new("j", "m"));
        }
    }

    #[test]
    fn zero_allocation_with_point_mass_balance() {
        let set = alt_set(2);
        let bal = BalanceVector {
            probabilities: vec![1.0, 0.0],
            tick: 0,
        };
        let mut rng = stream(2, "test", "v");
        for _ in 0..50 {
            let d = decide_route(&VehicleId::new("v"), 0.0, &set, &bal, &mut rng);
            assert!(!d.granted);
            assert_eq!(d.alternative, Some(0));
            assert_eq!(d.rng_draws, 2);
            assert_eq!(d.chosen_link, LinkId::new("j", "x0"));
        }
    }

    #[test]
    fn empirical_frequencies_match_law_of_large_numbers() {
        // P(grant)=0.5, alternatives split (0.75, 0.25):
        // expected outcome frequencies (0.5, 0.375, 0.125).
        let set = alt_set(2);
        let bal = BalanceVector {
            probabilities: vec![0.75, 0.25],
            tick: 0,
        };
        let mut rng = stream(3, "lln", "v");
        let n = 1_000_000u32;
        let mut counts = [0u32; 3];
        for _ in 0..n {
            let d = decide_route(&VehicleId::new("v"), 0.5, &set, &bal, &mut rng);
            match d.alternative {
                None => counts[0] += 1,
                Some(i) => counts[i + 1] += 1,
            }
        }
        let expected = [0.5, 0.375, 0.125];
        for (i, &p) in expected.iter().enumerate() {
            let freq = counts[i] as f64 / n as f64;
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (freq - p).abs() <= 3.0 * sigma,
                "outcome {i}: {freq} vs {p} (3 sigma = {})",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn decisions_are_bit_reproducible() {
        let set = alt_set(3);
        let bal = balance(&set, &[2, 5, 1], 0).unwrap();
        let run = || {
            let mut rng = stream(9, "vehicle", "veh-1");
            (0..100)
                .map(|_| decide_route(&VehicleId::new("veh-1"), 0.4, &set, &bal, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
