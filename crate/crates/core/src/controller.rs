//! Request/decision protocol: plain AIM reservation and the trust-aware
//! pipeline with pre-entry surveillance.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::monitor::{check_compliance, intersection_evidence, roadside_evidence, ComplianceVerdict, MonitorConfig, Step, TraceSample};
use crate::rl::{policy_state, QTable, RlEntry};
use crate::sim::footprint::{footprint, Footprint};
use crate::sim::geometry::{Lane, MapGeometry, VehicleBody};
use crate::sim::grid::{Reservation, ReservationGrid};
use crate::sim::trajectory::{Plan, RoutePath, Trajectory};
use crate::sl::EvidenceCounter;
use crate::store::{TrustStore, VehicleId, VehicleStatus};

#[derive(Debug, Clone, PartialEq)]
pub struct RequestMessage {
    pub vehicle_id: VehicleId,
    pub body: VehicleBody,
    pub sent_at: Step,
    pub predicted_arrival_step: Step,
    pub speed: f64,
    /// Carried for protocol completeness; kinematics are constant-speed.
    pub acceleration: f64,
    pub origin_lane: Lane,
    pub destination_lane: Lane,
}

impl RequestMessage {
    pub fn validate(&self, geometry: &MapGeometry) -> Result<()> {
        if self.predicted_arrival_step <= self.sent_at {
            return Err(Error::Config(format!(
                "vehicle {}: arrival step {} is not after send step {}",
                self.vehicle_id, self.predicted_arrival_step, self.sent_at
            )));
        }
        if !(self.speed > 0.0 && self.speed <= geometry.max_speed) {
            return Err(Error::Config(format!(
                "vehicle {}: speed {} outside (0, {}]",
                self.vehicle_id, self.speed, geometry.max_speed
            )));
        }
        geometry.check_lane(self.origin_lane)?;
        geometry.check_lane(self.destination_lane)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Approve(Reservation),
    Reject(String),
}

impl Decision {
    pub fn is_approved(&self) -> bool {
        matches!(self, Decision::Approve(_))
    }
}

/// Controller names as used in configuration files and on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerName {
    Aim1,
    AimFix,
    AimRl,
    AimTrust,
}

impl ControllerName {
    pub const ALL: [ControllerName; 4] = [ControllerName::Aim1, ControllerName::AimFix, ControllerName::AimRl, ControllerName::AimTrust];

    pub fn as_str(self) -> &'static str {
        match self {
            ControllerName::Aim1 => "aim1",
            ControllerName::AimFix => "aimfix",
            ControllerName::AimRl => "aimrl",
            ControllerName::AimTrust => "aimtrust",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, ControllerName::AimRl | ControllerName::AimTrust)
    }
}

impl fmt::Display for ControllerName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ControllerName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ControllerName::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown controller `{s}` (expected aim1, aimfix, aimrl or aimtrust)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControllerKind {
    Aim1,
    AimFix(f64),
    AimRl(QTable),
    AimTrust(QTable),
}

impl ControllerKind {
    pub fn name(&self) -> ControllerName {
        match self {
            ControllerKind::Aim1 => ControllerName::Aim1,
            ControllerKind::AimFix(_) => ControllerName::AimFix,
            ControllerKind::AimRl(_) => ControllerName::AimRl,
            ControllerKind::AimTrust(_) => ControllerName::AimTrust,
        }
    }

    /// Label used in result files; fixed-buffer controllers carry their buffer.
    pub fn label(&self) -> String {
        match self {
            ControllerKind::AimFix(b) => format!("aimfix-{b}"),
            other => other.name().to_string(),
        }
    }

    /// Whether approved vehicles are monitored before entering.
    pub fn surveils(&self) -> bool {
        self.name().is_learned()
    }

    /// Greedy buffer for one vehicle.
    pub fn buffer_for(&self, entry: &RlEntry) -> Result<f64> {
        Ok(match self {
            ControllerKind::Aim1 => 1.0,
            ControllerKind::AimFix(b) => *b,
            ControllerKind::AimRl(q) => f64::from(q.greedy(policy_state(entry, false)?)),
            ControllerKind::AimTrust(q) => f64::from(q.greedy(policy_state(entry, true)?)),
        })
    }
}

/// Maps a vehicle's route and trust to a buffer size.
pub trait BufferCalculator {
    fn buffer(&self, vehicle: VehicleId, origin: Lane, destination: Lane, trust: f64) -> f64;
}

impl BufferCalculator for ControllerKind {
    fn buffer(&self, vehicle_id: VehicleId, origin: Lane, destination: Lane, trust: f64) -> f64 {
        let entry = RlEntry {
            vehicle_id,
            origin,
            destination,
            trust,
        };
        self.buffer_for(&entry).unwrap_or(1.0)
    }
}

/// Same buffer for every request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedBuffer(pub f64);

impl BufferCalculator for FixedBuffer {
    fn buffer(&self, _: VehicleId, _: Lane, _: Lane, _: f64) -> f64 {
        self.0
    }
}

impl<F: Fn(VehicleId, Lane, Lane, f64) -> f64> BufferCalculator for F {
    fn buffer(&self, vehicle: VehicleId, origin: Lane, destination: Lane, trust: f64) -> f64 {
        self(vehicle, origin, destination, trust)
    }
}

fn reserve(grid: &mut ReservationGrid, request: &RequestMessage, buffer: f64, trajectory: Trajectory, tiles: Footprint) -> Decision {
    if grid.try_reserve(request.vehicle_id, &tiles) {
        Decision::Approve(Reservation {
            vehicle_id: request.vehicle_id,
            tiles,
            buffer,
            trajectory,
        })
    } else {
        Decision::Reject(format!(
            "space-time conflict for vehicle {} at step {}",
            request.vehicle_id, request.predicted_arrival_step
        ))
    }
}

/// Plain AIM: plan, inflate by `buffer`, reserve atomically.
pub fn aim_policy_decide(grid: &mut ReservationGrid, geometry: &MapGeometry, request: &RequestMessage, buffer: f64) -> Decision {
    if let Err(e) = request.validate(geometry) {
        return Decision::Reject(e.to_string());
    }
    let path = match RoutePath::new(geometry, request.origin_lane, request.destination_lane) {
        Ok(p) => Arc::new(p),
        Err(e) => return Decision::Reject(e.to_string()),
    };
    let trajectory = Plan::new(path, None, request.predicted_arrival_step, request.speed, geometry.time_step).trajectory();
    let tiles = footprint(&trajectory, buffer, &request.body, geometry);
    reserve(grid, request, buffer, trajectory, tiles)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct PlanKey {
    origin: Lane,
    destination: Lane,
    speed: u64,
    buffer: u64,
    length: u64,
    width: u64,
}

/// One intersection's reservation authority.
///
/// Plans and footprints are computed for arrival step 0 and shifted in time,
/// so repeated requests along the same route and speed are cheap.
#[derive(Debug, Clone)]
pub struct IntersectionManager {
    geometry: MapGeometry,
    grid: ReservationGrid,
    paths: HashMap<(Lane, Lane), Arc<RoutePath>>,
    cache: HashMap<PlanKey, (Trajectory, Footprint)>,
}

impl IntersectionManager {
    pub fn new(geometry: MapGeometry) -> Result<Self> {
        geometry.validate()?;
        Ok(IntersectionManager {
            grid: ReservationGrid::new(&geometry),
            geometry,
            paths: HashMap::new(),
            cache: HashMap::new(),
        })
    }

    pub fn geometry(&self) -> &MapGeometry {
        &self.geometry
    }

    pub fn grid(&self) -> &ReservationGrid {
        &self.grid
    }

    pub fn path(&mut self, origin: Lane, destination: Lane) -> Result<Arc<RoutePath>> {
        if let Some(p) = self.paths.get(&(origin, destination)) {
            return Ok(p.clone());
        }
        let p = Arc::new(RoutePath::new(&self.geometry, origin, destination)?);
        self.paths.insert((origin, destination), p.clone());
        Ok(p)
    }

    /// Cached equivalent of [`aim_policy_decide`].
    pub fn decide(&mut self, request: &RequestMessage, buffer: f64) -> Decision {
        if let Err(e) = request.validate(&self.geometry) {
            return Decision::Reject(e.to_string());
        }
        let key = PlanKey {
            origin: request.origin_lane,
            destination: request.destination_lane,
            speed: request.speed.to_bits(),
            buffer: buffer.to_bits(),
            length: request.body.length.to_bits(),
            width: request.body.width.to_bits(),
        };
        if !self.cache.contains_key(&key) {
            let path = match self.path(request.origin_lane, request.destination_lane) {
                Ok(p) => p,
                Err(e) => return Decision::Reject(e.to_string()),
            };
            let traj = Plan::new(path, None, 0, request.speed, self.geometry.time_step).trajectory();
            let tiles = footprint(&traj, buffer, &request.body, &self.geometry);
            self.cache.insert(key, (traj, tiles));
        }
        let (traj, tiles) = &self.cache[&key];
        let shift = request.predicted_arrival_step;
        let tiles = tiles.shifted(shift);
        if !self.grid.is_free_for(request.vehicle_id, &tiles) {
            return Decision::Reject(format!(
                "space-time conflict for vehicle {} at step {}",
                request.vehicle_id, shift
            ));
        }
        let trajectory = shift_trajectory(traj, shift);
        reserve(&mut self.grid, request, buffer, trajectory, tiles)
    }

    /// Releases every tile held by `vehicle`.
    pub fn revoke(&mut self, vehicle: VehicleId) -> bool {
        self.grid.release(vehicle).is_some()
    }
}

fn shift_trajectory(traj: &Trajectory, delta: Step) -> Trajectory {
    let mut t = traj.clone();
    for p in &mut t.samples {
        p.time += delta;
    }
    t.entry_step += delta;
    t.exit_step += delta;
    t
}

/// Trust-aware request handling: look up trust, compute the buffer, decide.
/// Returns the decision and the trust value the buffer was computed from.
pub fn aim_trust_process(
    manager: &mut IntersectionManager,
    request: &RequestMessage,
    store: &mut TrustStore,
    status: &mut VehicleStatus,
    calculator: &dyn BufferCalculator,
) -> (Decision, f64) {
    let trust = store.get_trust(request.vehicle_id);
    *status = VehicleStatus::Unprocessed;
    let buffer = calculator.buffer(request.vehicle_id, request.origin_lane, request.destination_lane, trust);
    let decision = manager.decide(request, buffer);
    if decision.is_approved() {
        *status = VehicleStatus::Approved;
    }
    (decision, trust)
}

/// An approved vehicle under pre-entry monitoring.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveillanceTask {
    pub vehicle_id: VehicleId,
    pub approval_step: Step,
    pub approved: Plan,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SurveillanceOutcome {
    /// Still approaching and compliant.
    Monitoring,
    /// Reached the region boundary without a violation.
    Safe,
    /// Deviation detected; the reservation has been revoked.
    Revoked { verdict: ComplianceVerdict, trust: f64 },
}

/// Checks the approach so far (`observed`/`reported` cover
/// `[approval_step, now]`). `at_boundary` marks the step the vehicle reaches
/// the region.
#[allow(clippy::too_many_arguments)]
pub fn surveillance_step(
    task: &SurveillanceTask,
    observed: &[TraceSample],
    reported: &[TraceSample],
    now: Step,
    at_boundary: bool,
    status: &mut VehicleStatus,
    store: &mut TrustStore,
    manager: &mut IntersectionManager,
    monitor: &MonitorConfig,
) -> Result<SurveillanceOutcome> {
    if *status != VehicleStatus::Approved {
        return Err(Error::Trace(format!("vehicle {} is not approved", task.vehicle_id)));
    }
    if at_boundary {
        *status = VehicleStatus::Safe;
        return Ok(SurveillanceOutcome::Safe);
    }
    let approved = task.approved.trace(task.approval_step, now);
    let cfg = monitor.with_window(task.approval_step, now);
    let verdict = check_compliance(observed, reported, &approved, &cfg)?;
    if verdict.compliant {
        return Ok(SurveillanceOutcome::Monitoring);
    }
    let delta = roadside_evidence(&verdict, EvidenceCounter::EMPTY, monitor);
    let trust = store.apply_evidence(task.vehicle_id, delta)?;
    manager.revoke(task.vehicle_id);
    *status = VehicleStatus::Unprocessed;
    Ok(SurveillanceOutcome::Revoked { verdict, trust })
}

/// Records the in-intersection verdict for a vehicle that left the region
/// (or was removed by a collision) and returns its new trust.
pub fn exit_update(vehicle: VehicleId, followed_approved_trajectory: bool, collided: bool, store: &mut TrustStore, monitor: &MonitorConfig) -> Result<f64> {
    let delta = intersection_evidence(followed_approved_trajectory, collided, EvidenceCounter::EMPTY, monitor);
    store.apply_evidence(vehicle, delta)
}
