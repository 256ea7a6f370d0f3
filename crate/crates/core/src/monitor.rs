//! Bounded-deviation behaviour monitors.
//!
//! A vehicle complies over a window `[window_start, window_end]` when, at every
//! step, its observed position is within `tol_trajectory` of both the reported
//! and the approved position and its observed speed is within `tol_speed` of
//! both the reported and the approved speed. Compliance turns into evidence:
//! `r += β1` for compliant behaviour, `s += β2` otherwise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::geometry::Point;
use crate::sl::EvidenceCounter;

/// Simulation step index.
pub type Step = i64;

/// Cap on the deviation-scaled penalty multiplier.
pub const MAX_PENALTY_SCALE: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub time: Step,
    pub position: Point,
    pub speed: f64,
}

impl TraceSample {
    pub fn new(time: Step, position: Point, speed: f64) -> Self {
        TraceSample {
            time,
            position,
            speed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    pub window_start: Step,
    pub window_end: Step,
    /// Position tolerance in meters.
    pub tol_trajectory: f64,
    /// Speed tolerance in m/s.
    pub tol_speed: f64,
    pub reward_unit: u32,
    pub penalty_unit: u32,
    /// Scale the penalty by the worst deviation/tolerance ratio (capped at 5).
    pub scale_by_deviation: bool,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            window_start: 0,
            window_end: 0,
            tol_trajectory: 1.0,
            tol_speed: 0.5,
            reward_unit: 1,
            penalty_unit: 1,
            scale_by_deviation: false,
        }
    }
}

impl MonitorConfig {
    pub fn with_window(mut self, start: Step, end: Step) -> Self {
        self.window_start = start;
        self.window_end = end;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_start > self.window_end {
            return Err(Error::Config(format!(
                "monitor window [{}, {}] is empty",
                self.window_start, self.window_end
            )));
        }
        if !(self.tol_trajectory > 0.0 && self.tol_speed > 0.0) {
            return Err(Error::Config("monitor tolerances must be positive".into()));
        }
        if self.reward_unit == 0 || self.penalty_unit == 0 {
            return Err(Error::Config("evidence units must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplianceVerdict {
    pub compliant: bool,
    pub max_trajectory_deviation: f64,
    pub max_speed_deviation: f64,
    tol_trajectory: f64,
    tol_speed: f64,
}

impl ComplianceVerdict {
    /// Worst deviation relative to its tolerance; `<= 1` for compliant verdicts.
    pub fn severity(&self) -> f64 {
        (self.max_trajectory_deviation / self.tol_trajectory)
            .max(self.max_speed_deviation / self.tol_speed)
    }
}

fn window_slice<'a>(
    seq: &'a [TraceSample],
    name: &str,
    start: Step,
    end: Step,
) -> Result<&'a [TraceSample]> {
    if seq.windows(2).any(|w| w[1].time <= w[0].time) {
        return Err(Error::Trace(format!("{name} sequence is not strictly time-ordered")));
    }
    let first = seq.partition_point(|s| s.time < start);
    let len = (end - start + 1) as usize;
    let slice = seq
        .get(first..first + len)
        .ok_or_else(|| Error::Trace(format!("{name} sequence does not cover [{start}, {end}]")))?;
    // strictly ordered + right length + right endpoints means every step is present
    if slice.first().map(|s| s.time) != Some(start) || slice.last().map(|s| s.time) != Some(end) {
        return Err(Error::Trace(format!("{name} sequence does not cover [{start}, {end}]")));
    }
    Ok(slice)
}

/// Evaluates the trajectory and speed formulas over the configured window.
pub fn check_compliance(
    observed: &[TraceSample],
    reported: &[TraceSample],
    approved: &[TraceSample],
    cfg: &MonitorConfig,
) -> Result<ComplianceVerdict> {
    cfg.validate()?;
    let (start, end) = (cfg.window_start, cfg.window_end);
    let observed = window_slice(observed, "observed", start, end)?;
    let reported = window_slice(reported, "reported", start, end)?;
    let approved = window_slice(approved, "approved", start, end)?;

    let mut max_tr: f64 = 0.0;
    let mut max_sp: f64 = 0.0;
    for ((o, r), a) in observed.iter().zip(reported).zip(approved) {
        max_tr = max_tr
            .max(o.position.distance(r.position))
            .max(o.position.distance(a.position));
        max_sp = max_sp
            .max((o.speed - r.speed).abs())
            .max((o.speed - a.speed).abs());
    }
    Ok(ComplianceVerdict {
        compliant: max_tr <= cfg.tol_trajectory && max_sp <= cfg.tol_speed,
        max_trajectory_deviation: max_tr,
        max_speed_deviation: max_sp,
        tol_trajectory: cfg.tol_trajectory,
        tol_speed: cfg.tol_speed,
    })
}

fn penalty(cfg: &MonitorConfig, severity: f64) -> f64 {
    let unit = f64::from(cfg.penalty_unit);
    if cfg.scale_by_deviation {
        unit * severity.ceil().clamp(1.0, MAX_PENALTY_SCALE)
    } else {
        unit
    }
}

/// Road-side evidence rule: reward compliance, penalise anything else.
pub fn roadside_evidence(
    verdict: &ComplianceVerdict,
    ev: EvidenceCounter,
    cfg: &MonitorConfig,
) -> EvidenceCounter {
    if verdict.compliant {
        ev + EvidenceCounter::positive(f64::from(cfg.reward_unit))
    } else {
        ev + EvidenceCounter::negative(penalty(cfg, verdict.severity()))
    }
}

/// In-intersection evidence rule: positive only for a collision-free pass
/// along the approved trajectory.
pub fn intersection_evidence(
    followed_approved_trajectory: bool,
    collided: bool,
    ev: EvidenceCounter,
    cfg: &MonitorConfig,
) -> EvidenceCounter {
    if followed_approved_trajectory && !collided {
        ev + EvidenceCounter::positive(f64::from(cfg.reward_unit))
    } else {
        ev + EvidenceCounter::negative(f64::from(cfg.penalty_unit))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight(len: i64, speed: f64) -> Vec<TraceSample> {
        (0..len)
            .map(|t| TraceSample::new(t, Point::new(t as f64 * speed, 0.0), speed))
            .collect()
    }

    fn cfg(end: Step) -> MonitorConfig {
        MonitorConfig::default().with_window(0, end)
    }

    #[test]
    fn identical_sequences_comply() {
        let s = straight(10, 2.0);
        let v = check_compliance(&s, &s, &s, &cfg(9)).unwrap();
        assert!(v.compliant);
        assert_eq!(v.max_trajectory_deviation, 0.0);
        assert_eq!(v.max_speed_deviation, 0.0);
    }

    #[test]
    fn single_position_violation() {
        let c = cfg(9);
        let s = straight(10, 2.0);
        let mut obs = s.clone();
        obs[4].position.y += 2.0 * c.tol_trajectory;
        let v = check_compliance(&obs, &s, &s, &c).unwrap();
        assert!(!v.compliant);
        assert!((v.max_trajectory_deviation - 2.0 * c.tol_trajectory).abs() < 1e-12);
    }

    #[test]
    fn reported_speed_offset_breaks_speed_formula() {
        let c = cfg(9);
        let s = straight(10, 2.0);
        let reported: Vec<_> = s
            .iter()
            .map(|x| TraceSample::new(x.time, x.position, x.speed + 1.5 * c.tol_speed))
            .collect();
        let v = check_compliance(&s, &reported, &s, &c).unwrap();
        assert!(!v.compliant);
        assert_eq!(v.max_trajectory_deviation, 0.0);
        assert!((v.max_speed_deviation - 1.5 * c.tol_speed).abs() < 1e-12);
    }

    #[test]
    fn within_tolerance_is_compliant() {
        let c = cfg(9);
        let s = straight(10, 2.0);
        let mut obs = s.clone();
        obs[3].position.x += 0.5 * c.tol_trajectory;
        obs[7].speed += c.tol_speed;
        assert!(check_compliance(&obs, &s, &s, &c).unwrap().compliant);
    }

    #[test]
    fn incomplete_or_misaligned_sequences_error() {
        let s = straight(10, 2.0);
        let short = straight(5, 2.0);
        assert!(check_compliance(&s, &short, &s, &cfg(9)).is_err());
        let mut gap = s.clone();
        gap.remove(4);
        assert!(check_compliance(&s, &s, &gap, &cfg(8)).is_err());
        let mut unordered = s.clone();
        unordered.swap(2, 3);
        assert!(check_compliance(&unordered, &s, &s, &cfg(9)).is_err());
        // a sub-window is fine
        let c = MonitorConfig::default().with_window(2, 6);
        assert!(check_compliance(&s, &s, &s, &c).unwrap().compliant);
    }

    #[test]
    fn roadside_examples() {
        let c = cfg(0);
        let s = straight(1, 1.0);
        let ok = check_compliance(&s, &s, &s, &c).unwrap();
        let mut obs = s.clone();
        obs[0].position.x += 3.0;
        let bad = check_compliance(&obs, &s, &s, &c).unwrap();

        let r = roadside_evidence(&ok, EvidenceCounter::EMPTY, &c);
        assert_eq!((r.positive, r.negative), (1.0, 0.0));
        let r = roadside_evidence(&bad, EvidenceCounter::new(3.0, 2.0).unwrap(), &c);
        assert_eq!((r.positive, r.negative), (3.0, 3.0));

        let two = MonitorConfig {
            reward_unit: 2,
            ..c
        };
        let once = roadside_evidence(&ok, EvidenceCounter::EMPTY, &two);
        let twice = roadside_evidence(&ok, once, &two);
        assert_eq!((twice.positive, twice.negative), (4.0, 0.0));
    }

    #[test]
    fn scaled_penalty_is_capped() {
        let c = MonitorConfig {
            scale_by_deviation: true,
            ..cfg(0)
        };
        let s = straight(1, 1.0);
        let mut obs = s.clone();
        obs[0].position.x += 2.5 * c.tol_trajectory;
        let v = check_compliance(&obs, &s, &s, &c).unwrap();
        assert_eq!(roadside_evidence(&v, EvidenceCounter::EMPTY, &c).negative, 3.0);
        obs[0].position.x += 100.0;
        let v = check_compliance(&obs, &s, &s, &c).unwrap();
        assert_eq!(roadside_evidence(&v, EvidenceCounter::EMPTY, &c).negative, 5.0);
    }

    #[test]
    fn intersection_examples() {
        let c = MonitorConfig::default();
        let r = intersection_evidence(true, false, EvidenceCounter::EMPTY, &c);
        assert_eq!((r.positive, r.negative), (1.0, 0.0));
        let r = intersection_evidence(true, true, EvidenceCounter::EMPTY, &c);
        assert_eq!((r.positive, r.negative), (0.0, 1.0));
        let r = intersection_evidence(false, false, EvidenceCounter::new(5.0, 5.0).unwrap(), &c);
        assert_eq!((r.positive, r.negative), (5.0, 6.0));
    }

    #[test]
    fn config_validation() {
        assert!(MonitorConfig::default().with_window(3, 1).validate().is_err());
        let c = MonitorConfig {
            tol_speed: 0.0,
            ..MonitorConfig::default()
        };
        assert!(c.validate().is_err());
        let c = MonitorConfig {
            penalty_unit: 0,
            ..MonitorConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
