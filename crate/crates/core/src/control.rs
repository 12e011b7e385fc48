//! Link controller: admission probability for irregular obstructions and
//! the smoothed broadcast coefficient for regular ones.

use thiserror::Error;

use crate::events::{Obstruction, ObstructionKind};
use crate::network::LinkId;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("controller invoked for inactive obstruction on {0}")]
    InactiveObstruction(LinkId),
    #[error("alpha must lie in (0,1), got {0}")]
    BadAlpha(f64),
}

/// Feedback state kept per active obstruction.
///
/// The headroom error is `e = c - x`; it is derived, never stored, so it can
/// not drift out of sync with the occupancy sample.
#[derive(Debug, Clone)]
pub struct ControllerState {
    link: LinkId,
    capacity: u32,
    occupancy: u32,
    gamma: f64,
    alpha: f64,
}

impl ControllerState {
    /// Creates the state at obstruction activation. The smoothing
    /// coefficient starts at `g(e(0))`, the fixed point it would settle at
    /// under constant error, so activation causes no artificial transient.
    pub fn new(
        link: LinkId,
        capacity: u32,
        occupancy: u32,
        alpha: f64,
    ) -> Result<Self, ControlError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(ControlError::BadAlpha(alpha));
        }
        let mut state = ControllerState {
            link,
            capacity,
            occupancy,
            gamma: 0.0,
            alpha,
        };
        state.gamma = state.headroom_gain();
        Ok(state)
    }

    pub fn link(&self) -> &LinkId {
        &self.link
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    pub fn occupancy(&self) -> u32 {
        self.occupancy
    }

    /// Records the per-tick occupancy sample `x(k)`.
    pub fn observe_occupancy(&mut self, occupancy: u32) {
        self.occupancy = occupancy;
    }

    /// Headroom error `e(k) = c - x(k)`.
    pub fn error(&self) -> i64 {
        self.capacity as i64 - self.occupancy as i64
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// The piecewise headroom gain `g(e)`: 0 when the link is full or over,
    /// `e/c` when partially free, 1 when fully free. Errors above the
    /// capacity cannot occur with nonnegative occupancy but are clamped.
    pub fn headroom_gain(&self) -> f64 {
        let e = self.error();
        let c = self.capacity as i64;
        if e <= 0 {
            0.0
        } else if e < c {
            e as f64 / c as f64
        } else {
            1.0
        }
    }

    /// One smoothing step: `gamma <- alpha * gamma + (1 - alpha) * g(e)`.
    /// Returns the updated coefficient, which stays in `[0,1]`.
    pub fn gamma_step(&mut self) -> f64 {
        self.gamma = self.alpha * self.gamma + (1.0 - self.alpha) * self.headroom_gain();
        self.gamma
    }
}

/// Admission probability for an irregular obstruction: 0 with no headroom,
/// `e/c` with partial headroom, 1 when the link is empty.
pub fn admission_probability(state: &ControllerState) -> f64 {
    state.headroom_gain()
}

/// What the controller broadcasts, depending on the obstruction kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControllerOutput {
    /// Direct admission probability (irregular obstructions).
    Admission(f64),
    /// Smoothed headroom coefficient (regular obstructions).
    Broadcast(f64),
}

impl ControllerOutput {
    pub fn value(&self) -> f64 {
        match self {
            ControllerOutput::Admission(p) => *p,
            ControllerOutput::Broadcast(g) => *g,
        }
    }
}

/// Dispatches on the obstruction kind: irregular obstructions get the
/// admission probability, regular ones get one smoothing step and the
/// resulting coefficient.
pub fn controller_output(
    state: &mut ControllerState,
    obstruction: &Obstruction,
) -> Result<ControllerOutput, ControlError> {
    if !obstruction.active {
        return Err(ControlError::InactiveObstruction(obstruction.link.clone()));
    }
    match obstruction.kind {
        ObstructionKind::Irregular => Ok(ControllerOutput::Admission(admission_probability(state))),
        ObstructionKind::Regular => Ok(ControllerOutput::Broadcast(state.gamma_step())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};

    fn state(capacity: u32, occupancy: u32) -> ControllerState {
        ControllerState::new(LinkId::new("l", "m"), capacity, occupancy, 0.1).unwrap()
    }

    #[test]
    fn admission_zero_when_over_capacity() {
        // c=3, x=5 -> e=-2 -> P=0.
        assert_eq!(admission_probability(&state(3, 5)), 0.0);
    }

    #[test]
    fn admission_one_when_empty() {
        // c=4, x=0 -> e=c -> P=1.
        assert_eq!(admission_probability(&state(4, 0)), 1.0);
    }

    #[test]
    fn admission_fractional_headroom() {
        // c=4, x=3 -> e=1 -> P=0.25.
        assert!((admission_probability(&state(4, 3)) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn admission_zero_at_exact_capacity() {
        assert_eq!(admission_probability(&state(3, 3)), 0.0);
    }

    #[test]
    fn admission_monotone_in_occupancy() {
        let mut last = f64::INFINITY;
        for x in 0..=8 {
            let p = admission_probability(&state(4, x));
            assert!(p <= last);
            assert!((0.0..=1.0).contains(&p));
            last = p;
        }
    }

    #[test]
    fn gamma_single_step() {
        // alpha=0.1, gamma=0.5, e=c so g=1: 0.1*0.5 + 0.9*1 = 0.95.
        let mut s = state(4, 2); // g(e)=0.5, so gamma starts at 0.5
        assert_eq!(s.gamma(), 0.5);
        s.observe_occupancy(0);
        let g = s.gamma_step();
        assert!((g - 0.95).abs() < 1e-15);
    }

    #[test]
    fn gamma_initializes_at_gain_fixed_point() {
        let s = state(4, 2);
        assert_eq!(s.gamma(), s.headroom_gain());
        // Constant error keeps gamma exactly at the fixed point.
        let mut s = state(4, 2);
        for _ in 0..50 {
            s.gamma_step();
        }
        assert!((s.gamma() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gamma_decays_geometrically_to_constant_gain() {
        // |gamma(k) - g| = alpha^k * |gamma(0) - g| exactly.
        let mut s = state(4, 0); // g = 1, gamma(0) = 1
        s.observe_occupancy(2); // g becomes 0.5 while gamma is still 1
        let g = s.headroom_gain();
        let gamma0 = s.gamma();
        for k in 1..=100 {
            s.gamma_step();
            let expected = s.alpha().powi(k) * (gamma0 - g).abs();
            assert!(
                ((s.gamma() - g).abs() - expected).abs() < 1e-12,
                "k={k}: {} vs {expected}",
                (s.gamma() - g).abs()
            );
        }
    }

    #[test]
    fn gamma_goes_to_zero_under_persistent_overflow() {
        let mut s = state(3, 3);
        for _ in 0..200 {
            s.gamma_step();
        }
        assert!(s.gamma().abs() < 1e-15);
    }

    #[test]
    fn gamma_stays_in_unit_interval() {
        let mut s = state(5, 0);
        let occupancies = [0u32, 7, 2, 5, 0, 0, 9, 1, 3, 4, 5, 6, 0, 2];
        for &x in occupancies.iter().cycle().take(500) {
            s.observe_occupancy(x);
            let g = s.gamma_step();
            assert!((0.0..=1.0).contains(&g));
        }
    }

    fn obstruction(kind: ObstructionKind, active: bool) -> Obstruction {
        Obstruction {
            link: LinkId::new("l", "m"),
            location: "loc".to_string(),
            capacity: 3,
            reduced_speed_kmh: 1.5,
            kind,
            radius_m: 575.0,
            active,
            opened_at: Utc.with_ymd_and_hms(2017, 5, 1, 10, 0, 0).unwrap(),
            closed_at: None,
        }
    }

    #[test]
    fn output_dispatches_on_kind() {
        let mut s = state(3, 3);
        let out =
            controller_output(&mut s, &obstruction(ObstructionKind::Irregular, true)).unwrap();
        assert_eq!(out, ControllerOutput::Admission(0.0));

        let mut s = state(4, 2);
        let out = controller_output(&mut s, &obstruction(ObstructionKind::Regular, true)).unwrap();
        match out {
            ControllerOutput::Broadcast(g) => assert!((g - 0.5).abs() < 1e-15),
            other => panic!("expected broadcast, got {other:?}"),
        }
    }

    #[test]
    fn output_rejects_inactive_obstruction() {
        let mut s = state(3, 0);
        let err = controller_output(&mut s, &obstruction(ObstructionKind::Irregular, false));
        assert!(matches!(err, Err(ControlError::InactiveObstruction(_))));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn gamma_bounded_for_any_occupancy_trajectory(
                capacity in 1u32..=10,
                occupancies in prop::collection::vec(0u32..=20, 1..200),
            ) {
                let mut s = ControllerState::new(
                    LinkId::new("l", "m"),
                    capacity,
                    occupancies[0],
                    0.1,
                ).unwrap();
                for &x in &occupancies {
                    s.observe_occupancy(x);
                    let g = s.gamma_step();
                    prop_assert!((0.0..=1.0).contains(&g));
                    let p = admission_probability(&s);
                    prop_assert!((0.0..=1.0).contains(&p));
                }
            }
        }
    }
}
