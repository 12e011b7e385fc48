//! Route parsing: decide whether an active obstruction lies on a vehicle's
//! predicted link sequence.

use crate::events::{Obstruction, ObstructionRegistry};
use crate::network::VehicleId;
use crate::prediction::PredictedRoute;

/// Outcome of parsing one predicted route against the obstruction registry.
///
/// `affected` is the binary flag consumed by the link controller; it is set
/// exactly when `obstruction` is present.
#[derive(Debug, Clone)]
pub struct ParseVerdict {
    pub vehicle: VehicleId,
    pub affected: bool,
    pub obstruction: Option<Obstruction>,
}

impl ParseVerdict {
    fn clear(vehicle: VehicleId) -> Self {
        ParseVerdict {
            vehicle,
            affected: false,
            obstruction: None,
        }
    }
}

/// Checks the predicted sequence against every active obstruction.
///
/// When several active obstructions intersect the sequence, the one met
/// earliest along it is reported: that is the one the driver reaches first.
pub fn parse_route(prediction: &PredictedRoute, registry: &ObstructionRegistry) -> ParseVerdict {
    for link in &prediction.links {
        if let Some(obstruction) = registry.active_on(link) {
            return ParseVerdict {
                vehicle: prediction.vehicle.clone(),
                affected: true,
                obstruction: Some(obstruction.clone()),
            };
        }
    }
    ParseVerdict::clear(prediction.vehicle.clone())
}
