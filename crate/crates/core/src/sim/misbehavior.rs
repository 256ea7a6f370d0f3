//! How untrusted vehicles disobey approved trajectories.
//!
//! A deviating vehicle drives its approved route but scales its speed by a
//! factor drawn from `[1 - δ, 1 + δ]` and shifts its entry into the
//! intersection by an integer number of steps drawn from `[-k, k]`.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::monitor::Step;
use crate::sim::geometry::{Lane, MapGeometry, VehicleBody};
use crate::sim::trajectory::{Plan, RoutePath, Trajectory};
use crate::store::{VehicleId, VehicleStatus};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MisbehaviorConfig {
    /// Probability that an untrusted vehicle deviates from an approval.
    pub p_dev: f64,
    /// Relative speed spread `δ`.
    pub speed_spread: f64,
    /// Maximum entry-time offset `k` in steps.
    pub max_entry_offset: u32,
}

impl Default for MisbehaviorConfig {
    fn default() -> Self {
        MisbehaviorConfig {
            p_dev: 0.5,
            speed_spread: 0.3,
            max_entry_offset: 4,
        }
    }
}

impl MisbehaviorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_dev) {
            return Err(Error::Config("misbehavior.p_dev must lie in [0,1]".into()));
        }
        if !(0.0..1.0).contains(&self.speed_spread) {
            return Err(Error::Config("misbehavior.speed_spread must lie in [0,1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deviation {
    pub speed_factor: f64,
    pub entry_offset: Step,
}

impl Deviation {
    /// Draws a deviation for one approval. Honest vehicles never deviate and
    /// consume nothing from `rng`.
    pub fn draw<R: Rng + ?Sized>(honest: bool, rng: &mut R, cfg: &MisbehaviorConfig) -> Option<Self> {
        if honest || cfg.p_dev <= 0.0 || rng.gen::<f64>() >= cfg.p_dev {
            return None;
        }
        let speed_factor = if cfg.speed_spread > 0.0 {
            rng.gen_range(1.0 - cfg.speed_spread..=1.0 + cfg.speed_spread)
        } else {
            1.0
        };
        let k = i64::from(cfg.max_entry_offset);
        let entry_offset = rng.gen_range(-k..=k);
        Some(Deviation {
            speed_factor,
            entry_offset,
        })
    }

    /// The plan actually driven instead of `approved`, which was granted at
    /// `(approval_step, approval_s)`.
    pub fn apply(
        &self,
        approved: &Plan,
        approval: (Step, f64),
        geometry: &MapGeometry,
    ) -> Plan {
        // The scaled speed is driven from the approval point on, so arrival
        // drifts with it; the offset shifts it further.
        let speed = (approved.speed * self.speed_factor).min(geometry.max_speed);
        let remaining = (approved.path.entry_s() - approval.1).max(0.0);
        let steps = |v: f64| ((remaining / (v * geometry.time_step)) - 1e-9).ceil().max(1.0) as Step;
        let entry = (approval.0 + steps(speed) + self.entry_offset).max(approval.0 + steps(geometry.max_speed));
        Plan::new(
            approved.path.clone(),
            Some(approval),
            entry,
            speed,
            geometry.time_step,
        )
    }
}

/// Scenario-level view of one vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleAgent {
    pub vehicle_id: VehicleId,
    /// Ground truth; never visible to controllers.
    pub honest: bool,
    pub body: VehicleBody,
    pub origin_lane: Lane,
    pub destination_lane: Lane,
    pub status: VehicleStatus,
    pub trajectory_approved: Option<Trajectory>,
    pub trajectory_actual: Option<Trajectory>,
}

/// The in-intersection trajectory the vehicle actually drives.
pub fn actualize<R: Rng + ?Sized>(
    geometry: &MapGeometry,
    vehicle: &VehicleAgent,
    rng: &mut R,
    cfg: &MisbehaviorConfig,
) -> Result<Trajectory> {
    let approved = vehicle
        .trajectory_approved
        .as_ref()
        .ok_or_else(|| Error::Trace(format!("vehicle {} has no approved trajectory", vehicle.vehicle_id)))?;
    let Some(dev) = Deviation::draw(vehicle.honest, rng, cfg) else {
        return Ok(approved.clone());
    };
    let speed = approved.samples.first().map_or(0.0, |p| p.speed);
    let path = Arc::new(RoutePath::new(geometry, vehicle.origin_lane, vehicle.destination_lane)?);
    let plan = Plan::new(path, None, approved.entry_step, speed, geometry.time_step);
    let before_entry = (approved.entry_step - 1 - i64::from(cfg.max_entry_offset), 0.0);
    Ok(dev.apply(&plan, before_entry, geometry).trajectory())
}
