//! Tick-level world for one episode: `tau` intersection passings by the same
//! `n` vehicles.
//!
//! Each passing runs in discrete simulation steps. Vehicles spawn on their
//! approach road, request a reservation every step until approved, and wait
//! at a hold point short of the region while unapproved. Approved untrusted
//! vehicles may drive a deviated plan. Collisions are checked among vehicles
//! inside the region; colliding vehicles are removed.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ScenarioConfig;
use crate::controller::{
    aim_trust_process, exit_update, surveillance_step, Decision, IntersectionManager, RequestMessage, SurveillanceOutcome,
    SurveillanceTask,
};
use crate::error::{Error, Result};
use crate::monitor::{check_compliance, MonitorConfig, Step};
use crate::rl::RlEntry;
use crate::sim::collision::bodies_overlap;
use crate::sim::geometry::{Lane, MapGeometry, Road, VehicleBody};
use crate::sim::misbehavior::{Deviation, MisbehaviorConfig};
use crate::sim::trajectory::{Plan, RoutePath, Trajectory};
use crate::store::{TrustStore, VehicleId, VehicleStatus};

pub const TRAINING_SET: u64 = 0;

pub(crate) const STREAM_SPAWN: u64 = 1;
pub(crate) const STREAM_HONESTY: u64 = 2;
pub(crate) const STREAM_EXPLORE: u64 = 3;
pub(crate) const STREAM_TRAIN: u64 = 4;
pub(crate) const STREAM_EVAL: u64 = 5;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a seed and a path of labels into one key.
pub fn misbehavior_key(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

/// Independent random stream identified by `parts`.
pub fn substream(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(misbehavior_key(0, parts));
    rng
}

/// Where and when one vehicle starts a passing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpawnSpec {
    pub origin: Lane,
    pub destination: Lane,
    pub speed: f64,
    pub spawn_step: Step,
}

/// Spawn specs for every passing of an episode, indexed `[passing][vehicle]`.
pub type SpawnSet = Arc<Vec<Vec<SpawnSpec>>>;

/// The route set `set_index` (0 is the training set).
pub fn spawn_set(cfg: &ScenarioConfig, set_index: u64) -> SpawnSet {
    let mut rng = substream(cfg.seed, &[STREAM_SPAWN, set_index]);
    let lanes = cfg.geometry.lanes_per_road;
    let steps = (0..cfg.tau)
        .map(|_| {
            (0..cfg.n)
                .map(|_| {
                    let origin_road = Road::from_index(rng.gen_range(0..4));
                    let dest_road = Road::from_index((origin_road.index() + rng.gen_range(1..4)) % 4);
                    let origin = Lane::new(origin_road, rng.gen_range(0..lanes));
                    let destination = Lane::new(dest_road, rng.gen_range(0..lanes));
                    let speed = if cfg.spawn.speed_max > cfg.spawn.speed_min {
                        rng.gen_range(cfg.spawn.speed_min..cfg.spawn.speed_max)
                    } else {
                        cfg.spawn.speed_min
                    };
                    SpawnSpec {
                        origin,
                        destination,
                        speed,
                        spawn_step: rng.gen_range(0..cfg.spawn.window),
                    }
                })
                .collect()
        })
        .collect();
    Arc::new(steps)
}

/// Ground-truth honesty per vehicle for a route set; exactly
/// `round(n · untrusted_fraction)` vehicles are untrusted.
pub fn honesty(cfg: &ScenarioConfig, set_index: u64) -> Vec<bool> {
    let mut rng = substream(cfg.seed, &[STREAM_HONESTY, set_index]);
    let mut ids: Vec<usize> = (0..cfg.n).collect();
    rand::seq::SliceRandom::shuffle(ids.as_mut_slice(), &mut rng);
    let mut honest = vec![true; cfg.n];
    for &i in &ids[..cfg.untrusted_count()] {
        honest[i] = false;
    }
    honest
}

/// Misbehavior key for one evaluation episode.
pub fn evaluation_key(seed: u64, set_index: u64, run: u64) -> u64 {
    misbehavior_key(seed, &[STREAM_EVAL, set_index, run])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecisionEvent {
    pub passing: usize,
    pub step: Step,
    pub vehicle_id: VehicleId,
    pub approved: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StatusEvent {
    pub passing: usize,
    pub step: Step,
    pub vehicle_id: VehicleId,
    pub status: VehicleStatus,
}

/// What happened to one vehicle during one passing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleOutcome {
    pub vehicle_id: VehicleId,
    pub honest: bool,
    pub buffer: f64,
    pub collided: bool,
    pub exited: bool,
    /// Any detected non-compliance during the passing.
    pub violated: bool,
    pub revocations: u32,
    /// Trust after the passing.
    pub trust: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// 1-based passing index.
    pub passing: usize,
    pub vehicles: Vec<VehicleOutcome>,
    /// Simulation steps from the first spawn to the last vehicle leaving.
    pub duration_steps: Step,
    pub unserved: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpisodeTotals {
    /// Vehicles removed by collisions.
    pub collisions: usize,
    pub passings: usize,
    pub elapsed_steps: Step,
    pub buffer_sum: f64,
    pub unserved: usize,
}

#[derive(Debug, Clone)]
struct Approval {
    step: Step,
    approved: Plan,
    actual: Plan,
    actual_trajectory: Trajectory,
}

#[derive(Debug, Clone)]
enum Phase {
    Waiting,
    Approaching { s: f64 },
    Approved(Box<Approval>),
    Crossing(Box<Approval>),
    Done,
}

#[derive(Debug, Clone)]
struct Passing {
    id: VehicleId,
    honest: bool,
    spec: SpawnSpec,
    path: Arc<RoutePath>,
    buffer: f64,
    /// Drawn once per passing; consumed by the first approval.
    deviation: Option<Deviation>,
    phase: Phase,
    status: VehicleStatus,
    revocations: u32,
    violated: bool,
    collided: bool,
    exited: bool,
}

/// One episode in progress.
#[derive(Debug, Clone)]
pub struct Episode {
    geometry: MapGeometry,
    monitor: MonitorConfig,
    misbehavior: MisbehaviorConfig,
    body: VehicleBody,
    n: usize,
    tau: usize,
    step_cap: Step,
    spawns: SpawnSet,
    honest: Vec<bool>,
    key: u64,
    surveillance: bool,
    store: TrustStore,
    passing: usize,
    totals: EpisodeTotals,
    decisions: Vec<DecisionEvent>,
    statuses: Vec<StatusEvent>,
}

impl Episode {
    /// `key` seeds all misbehavior draws; `surveillance` enables pre-entry
    /// monitoring and revocation.
    pub fn new(cfg: &ScenarioConfig, spawns: SpawnSet, honest: Vec<bool>, key: u64, surveillance: bool) -> Result<Self> {
        cfg.validate()?;
        if spawns.len() != cfg.tau || spawns.iter().any(|s| s.len() != cfg.n) || honest.len() != cfg.n {
            return Err(Error::Config(format!(
                "spawn set and honesty flags must cover {} passings of {} vehicles",
                cfg.tau, cfg.n
            )));
        }
        Ok(Episode {
            geometry: cfg.geometry,
            monitor: cfg.monitor,
            misbehavior: cfg.misbehavior,
            body: VehicleBody::default(),
            n: cfg.n,
            tau: cfg.tau,
            step_cap: cfg.step_cap,
            spawns,
            honest,
            key,
            surveillance,
            store: TrustStore::new(),
            passing: 0,
            totals: EpisodeTotals::default(),
            decisions: Vec::new(),
            statuses: Vec::new(),
        })
    }

    pub fn vehicle_ids(&self) -> impl Iterator<Item = VehicleId> {
        (1..=self.n as u32).map(VehicleId)
    }

    pub fn honest(&self) -> &[bool] {
        &self.honest
    }

    pub fn spawns(&self) -> &SpawnSet {
        &self.spawns
    }

    pub fn store(&self) -> &TrustStore {
        &self.store
    }

    pub fn is_done(&self) -> bool {
        self.passing >= self.tau
    }

    /// Passings completed so far.
    pub fn passings(&self) -> usize {
        self.passing
    }

    pub fn metrics(&self) -> EpisodeTotals {
        self.totals
    }

    pub fn decisions(&self) -> &[DecisionEvent] {
        &self.decisions
    }

    pub fn statuses(&self) -> &[StatusEvent] {
        &self.statuses
    }

    /// State entries for the next passing.
    pub fn observe(&mut self) -> Vec<RlEntry> {
        let specs = &self.spawns[self.passing.min(self.tau - 1)];
        (0..self.n)
            .map(|i| {
                let id = VehicleId(i as u32 + 1);
                RlEntry {
                    vehicle_id: id,
                    origin: specs[i].origin,
                    destination: specs[i].destination,
                    trust: self.store.get_trust(id),
                }
            })
            .collect()
    }

    /// Runs the next passing with one buffer per vehicle.
    pub fn step(&mut self, buffers: &[f64]) -> Result<StepReport> {
        if self.is_done() {
            return Err(Error::Config("episode already finished".into()));
        }
        if buffers.len() != self.n || buffers.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::Config(format!("expected {} finite non-negative buffers", self.n)));
        }
        let passing = self.passing + 1;
        let mut manager = IntersectionManager::new(self.geometry)?;
        let mut vehicles = Vec::with_capacity(self.n);
        for (i, spec) in self.spawns[self.passing].iter().enumerate() {
            let id = VehicleId(i as u32 + 1);
            let mut rng = substream(self.key, &[passing as u64, u64::from(id.0)]);
            vehicles.push(Passing {
                id,
                honest: self.honest[i],
                spec: *spec,
                path: manager.path(spec.origin, spec.destination)?,
                buffer: buffers[i],
                deviation: Deviation::draw(self.honest[i], &mut rng, &self.misbehavior),
                phase: Phase::Waiting,
                status: VehicleStatus::Unprocessed,
                revocations: 0,
                violated: false,
                collided: false,
                exited: false,
            });
        }
        let first = vehicles.iter().map(|v| v.spec.spawn_step).min().unwrap_or(0);
        let mut now = first;
        loop {
            self.tick(passing, now, &mut vehicles, &mut manager)?;
            if vehicles.iter().all(|v| matches!(v.phase, Phase::Done)) || now - first >= self.step_cap {
                break;
            }
            now += 1;
        }
        let end = now;

        let mut unserved = 0;
        let mut outcomes = Vec::with_capacity(self.n);
        for v in &vehicles {
            if !matches!(v.phase, Phase::Done) {
                unserved += 1;
            }
            outcomes.push(VehicleOutcome {
                vehicle_id: v.id,
                honest: v.honest,
                buffer: v.buffer,
                collided: v.collided,
                exited: v.exited,
                violated: v.violated,
                revocations: v.revocations,
                trust: self.store.peek_trust(v.id),
            });
        }
        let duration = (end - first).max(1);
        self.totals.collisions += outcomes.iter().filter(|o| o.collided).count();
        self.totals.passings += 1;
        self.totals.elapsed_steps += duration;
        self.totals.buffer_sum += buffers.iter().sum::<f64>();
        self.totals.unserved += unserved;
        self.passing = passing;
        Ok(StepReport {
            passing,
            vehicles: outcomes,
            duration_steps: duration,
            unserved,
        })
    }

    fn set_status(&mut self, passing: usize, step: Step, v: &mut Passing, status: VehicleStatus) {
        v.status = status;
        self.record_status(passing, step, v);
    }

    fn record_status(&mut self, passing: usize, step: Step, v: &Passing) {
        let changed = self
            .statuses
            .iter()
            .rev()
            .find(|e| e.vehicle_id == v.id)
            .is_none_or(|e| e.status != v.status || e.passing != passing);
        if changed {
            self.statuses.push(StatusEvent {
                passing,
                step,
                vehicle_id: v.id,
                status: v.status,
            });
        }
    }

    fn tick(&mut self, passing: usize, now: Step, vehicles: &mut [Passing], manager: &mut IntersectionManager) -> Result<()> {
        // spawn
        for v in vehicles.iter_mut() {
            if matches!(v.phase, Phase::Waiting) && v.spec.spawn_step == now {
                v.phase = Phase::Approaching { s: 0.0 };
                self.set_status(passing, now, v, VehicleStatus::Unprocessed);
            }
        }

        // entry and pre-entry surveillance
        for v in vehicles.iter_mut() {
            let Phase::Approved(ap) = &v.phase else { continue };
            if now == ap.actual.entry_step {
                let Phase::Approved(ap) = std::mem::replace(&mut v.phase, Phase::Done) else {
                    unreachable!()
                };
                v.phase = Phase::Crossing(ap);
                self.set_status(passing, now, v, VehicleStatus::Safe);
                continue;
            }
            if !self.surveillance || now <= ap.step {
                continue;
            }
            let task = SurveillanceTask {
                vehicle_id: v.id,
                approval_step: ap.step,
                approved: ap.approved.clone(),
            };
            let observed = ap.actual.trace(ap.step, now);
            let s_now = ap.actual.motion.s_at(now);
            let mut status = v.status;
            let outcome = surveillance_step(
                &task,
                &observed,
                &observed,
                now,
                false,
                &mut status,
                &mut self.store,
                manager,
                &self.monitor,
            )?;
            if let SurveillanceOutcome::Revoked { .. } = outcome {
                v.violated = true;
                v.revocations += 1;
                v.phase = Phase::Approaching { s: s_now };
                self.set_status(passing, now, v, status);
            }
        }

        // collisions inside the region
        let crossing: Vec<usize> = (0..vehicles.len())
            .filter(|&i| matches!(vehicles[i].phase, Phase::Crossing(_)))
            .collect();
        let mut hit = BTreeSet::new();
        for (k, &i) in crossing.iter().enumerate() {
            for &j in &crossing[k + 1..] {
                let (Phase::Crossing(a), Phase::Crossing(b)) = (&vehicles[i].phase, &vehicles[j].phase) else {
                    unreachable!()
                };
                let (Some(pa), Some(pb)) = (a.actual_trajectory.pose_at(now), b.actual_trajectory.pose_at(now)) else {
                    continue;
                };
                if bodies_overlap(pa, &self.body, pb, &self.body) {
                    hit.insert(i);
                    hit.insert(j);
                }
            }
        }
        for &i in &hit {
            let v = &mut vehicles[i];
            let Phase::Crossing(ap) = std::mem::replace(&mut v.phase, Phase::Done) else {
                unreachable!()
            };
            let followed = self.followed(&ap, now)?;
            v.violated |= !followed;
            v.collided = true;
            exit_update(v.id, followed && !v.violated, true, &mut self.store, &self.monitor)?;
            manager.revoke(v.id);
        }

        // exits
        for v in vehicles.iter_mut() {
            let Phase::Crossing(ap) = &v.phase else { continue };
            if now < ap.actual.exit_step {
                continue;
            }
            let followed = self.followed(ap, ap.actual.exit_step.max(ap.approved.exit_step))?;
            v.violated |= !followed;
            exit_update(v.id, !v.violated, false, &mut self.store, &self.monitor)?;
            manager.revoke(v.id);
            v.exited = true;
            v.phase = Phase::Done;
        }

        // requests
        let dt = self.geometry.time_step;
        for v in vehicles.iter_mut() {
            let Phase::Approaching { s } = v.phase else { continue };
            let remaining = (v.path.entry_s() - s).max(0.0);
            let lead = ((remaining / (v.spec.speed * dt)) - 1e-9).ceil().max(1.0) as Step;
            let request = RequestMessage {
                vehicle_id: v.id,
                body: self.body,
                sent_at: now,
                predicted_arrival_step: now + lead,
                speed: v.spec.speed,
                acceleration: 0.0,
                origin_lane: v.spec.origin,
                destination_lane: v.spec.destination,
            };
            let buffer = v.buffer;
            let mut status = v.status;
            let calc = move |_: VehicleId, _: Lane, _: Lane, _: f64| buffer;
            let (decision, _) = aim_trust_process(manager, &request, &mut self.store, &mut status, &calc);
            self.decisions.push(DecisionEvent {
                passing,
                step: now,
                vehicle_id: v.id,
                approved: decision.is_approved(),
            });
            if let Decision::Approve(_) = decision {
                let approved = Plan::new(v.path.clone(), Some((now, s)), now + lead, v.spec.speed, dt);
                // One deviated trajectory per passing; a vehicle caught and
                // re-approved drives the new plan as granted.
                let actual = match v.deviation.take() {
                    Some(dev) => dev.apply(&approved, (now, s), &self.geometry),
                    None => approved.clone(),
                };
                let actual_trajectory = actual.trajectory();
                v.phase = Phase::Approved(Box::new(Approval {
                    step: now,
                    approved,
                    actual,
                    actual_trajectory,
                }));
            }
            self.set_status(passing, now, v, status);
        }

        // unapproved vehicles creep toward the hold point
        for v in vehicles.iter_mut() {
            if let Phase::Approaching { s } = &mut v.phase {
                let hold = v.path.entry_s() - self.geometry.hold_gap;
                if *s < hold {
                    *s = (*s + v.spec.speed * dt).min(hold);
                }
            }
        }
        Ok(())
    }

    /// In-region compliance of the actual drive against the approval, over
    /// both plans' region windows up to `until`.
    fn followed(&self, ap: &Approval, until: Step) -> Result<bool> {
        let start = ap.actual.entry_step.min(ap.approved.entry_step);
        let end = until.max(start);
        let observed = ap.actual.trace(start, end);
        let approved = ap.approved.trace(start, end);
        let cfg = self.monitor.with_window(start, end);
        Ok(check_compliance(&observed, &observed, &approved, &cfg)?.compliant)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(untrusted: f64) -> ScenarioConfig {
        ScenarioConfig {
            untrusted_fraction: untrusted,
            ..ScenarioConfig::default()
        }
    }

    fn run(cfg: &ScenarioConfig, buffer: f64, surveillance: bool, key: u64) -> (Episode, Vec<StepReport>) {
        let mut ep = Episode::new(cfg, spawn_set(cfg, 1), honesty(cfg, 1), key, surveillance).unwrap();
        let mut reports = Vec::new();
        while !ep.is_done() {
            reports.push(ep.step(&vec![buffer; cfg.n]).unwrap());
        }
        (ep, reports)
    }

    #[test]
    fn honesty_counts() {
        for (f, k) in [(0.0, 0), (0.2, 2), (0.6, 6), (1.0, 10)] {
            assert_eq!(honesty(&cfg(f), 3).iter().filter(|h| !**h).count(), k);
        }
    }

    #[test]
    fn spawn_sets_are_seeded() {
        let c = cfg(0.0);
        assert_eq!(spawn_set(&c, 2), spawn_set(&c, 2));
        assert_ne!(spawn_set(&c, 2), spawn_set(&c, 3));
        for step in spawn_set(&c, 4).iter() {
            for s in step {
                assert_ne!(s.origin.road, s.destination.road);
                assert!((8.0..12.0).contains(&s.speed));
                assert!((0..8).contains(&s.spawn_step));
            }
        }
    }

    #[test]
    fn every_vehicle_passes_once_per_step() {
        let c = cfg(0.0);
        let (ep, reports) = run(&c, 1.0, false, 9);
        assert_eq!(reports.len(), 10);
        let m = ep.metrics();
        assert_eq!(m.passings, 10);
        assert_eq!(m.collisions, 0);
        assert_eq!(m.unserved, 0);
        for r in &reports {
            assert!(r.vehicles.iter().all(|v| v.exited && !v.violated && !v.collided));
        }
        // ten compliant exits each
        for id in ep.vehicle_ids() {
            let rec = ep.store().record(id).unwrap();
            assert_eq!((rec.counters.positive, rec.counters.negative), (10.0, 0.0));
        }
    }

    #[test]
    fn deterministic_per_key() {
        let c = cfg(1.0);
        let (a, ra) = run(&c, 1.0, true, 42);
        let (b, rb) = run(&c, 1.0, true, 42);
        assert_eq!(ra, rb);
        assert_eq!(a.decisions(), b.decisions());
    }

    #[test]
    fn untrusted_traffic_is_penalised() {
        let c = cfg(1.0);
        let (ep, reports) = run(&c, 1.0, true, 5);
        let violations: usize = reports.iter().flat_map(|r| &r.vehicles).filter(|v| v.violated).count();
        assert!(violations > 0);
        let revocations: u32 = reports.iter().flat_map(|r| &r.vehicles).map(|v| v.revocations).sum();
        assert!(revocations > 0);
        assert!(ep.vehicle_ids().any(|id| ep.store().peek_trust(id) < 0.5));
    }

    #[test]
    fn rejects_bad_buffers() {
        let c = cfg(0.0);
        let mut ep = Episode::new(&c, spawn_set(&c, 1), honesty(&c, 1), 0, false).unwrap();
        assert!(ep.step(&[1.0; 3]).is_err());
        assert!(ep.step(&[f64::NAN; 10]).is_err());
    }
}
