use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::monitor::{Step, TraceSample};
use crate::sim::geometry::{Lane, MapGeometry, Point, RouteClass};

/// Polyline segments used to approximate a turning arc.
const ARC_SEGMENTS: usize = 64;

/// A vehicle's full route: approach road, the path through the intersection
/// region (a straight segment or a quarter arc), and the departure road.
///
/// Positions along the route are addressed by arc length `s`; the vehicle
/// spawns at `s = 0` and enters the region at [`RoutePath::entry_s`].
#[derive(Debug, Clone, PartialEq)]
pub struct RoutePath {
    origin: Lane,
    destination: Lane,
    class: RouteClass,
    points: Vec<Point>,
    cumulative: Vec<f64>,
    entry_s: f64,
    exit_s: f64,
}

impl RoutePath {
    pub fn new(geometry: &MapGeometry, origin: Lane, destination: Lane) -> Result<Self> {
        geometry.check_lane(origin)?;
        geometry.check_lane(destination)?;
        let class = RouteClass::of(origin, destination)?;
        let (entry, heading_in) = geometry.entry_pose(origin);
        let (exit, heading_out) = geometry.exit_pose(destination);

        let mut points = vec![entry - heading_in * geometry.approach_length, entry];
        match class {
            RouteClass::Straight => {}
            RouteClass::Left | RouteClass::Right => {
                // Quarter ellipse centred on the corner shared by the entry
                // and exit lines; a circle when both offsets match.
                let along_out = (exit - entry).dot(heading_out);
                let along_in = (exit - entry).dot(heading_in);
                let corner = entry + heading_out * along_out;
                for k in 1..ARC_SEGMENTS {
                    let phi = FRAC_PI_2 * k as f64 / ARC_SEGMENTS as f64;
                    points.push(
                        corner - heading_out * (along_out * phi.cos())
                            + heading_in * (along_in * phi.sin()),
                    );
                }
            }
        }
        points.push(exit);
        points.push(exit + heading_out * geometry.approach_length);

        let mut cumulative = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in points.windows(2) {
            acc += w[0].distance(w[1]);
            cumulative.push(acc);
        }
        let entry_s = cumulative[1];
        let exit_s = cumulative[points.len() - 2];
        Ok(RoutePath {
            origin,
            destination,
            class,
            points,
            cumulative,
            entry_s,
            exit_s,
        })
    }

    pub fn origin(&self) -> Lane {
        self.origin
    }

    pub fn destination(&self) -> Lane {
        self.destination
    }

    pub fn class(&self) -> RouteClass {
        self.class
    }

    pub fn entry_s(&self) -> f64 {
        self.entry_s
    }

    pub fn exit_s(&self) -> f64 {
        self.exit_s
    }

    /// Length of the path inside the intersection region.
    pub fn crossing_length(&self) -> f64 {
        self.exit_s - self.entry_s
    }

    /// Position and unit heading at arc length `s`, extrapolating linearly
    /// past either end.
    pub fn point_at(&self, s: f64) -> (Point, Point) {
        let last_seg = self.points.len() - 2;
        let seg = self
            .cumulative
            .partition_point(|&c| c <= s)
            .saturating_sub(1)
            .min(last_seg);
        let (a, b) = (self.points[seg], self.points[seg + 1]);
        let heading = (b - a).normalized();
        (a + heading * (s - self.cumulative[seg]), heading)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub time: Step,
    pub position: Point,
    /// Unit heading vector.
    pub heading: Point,
    pub speed: f64,
}

impl Pose {
    pub fn trace_sample(&self) -> TraceSample {
        TraceSample::new(self.time, self.position, self.speed)
    }
}

/// Samples of a vehicle's passage through the intersection region, one per
/// simulation step from `entry_step` to `exit_step` inclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Pose>,
    pub entry_step: Step,
    pub exit_step: Step,
}

impl Trajectory {
    pub fn trace(&self) -> Vec<TraceSample> {
        self.samples.iter().map(Pose::trace_sample).collect()
    }

    pub fn pose_at(&self, step: Step) -> Option<&Pose> {
        let idx = step.checked_sub(self.entry_step)?;
        usize::try_from(idx).ok().and_then(|i| self.samples.get(i))
    }

    pub fn steps(&self) -> Step {
        self.exit_step - self.entry_step
    }
}

/// Piecewise-linear arc length over time; extrapolated with the last
/// segment's rate after the final knot and held constant before the first.
#[derive(Debug, Clone, PartialEq)]
pub struct Motion {
    knots: Vec<(Step, f64)>,
}

impl Motion {
    pub fn new(knots: Vec<(Step, f64)>) -> Self {
        assert!(knots.len() >= 2, "a motion needs at least two knots");
        assert!(
            knots.windows(2).all(|w| w[0].0 < w[1].0),
            "motion knots must be strictly time-ordered"
        );
        Motion { knots }
    }

    pub fn s_at(&self, t: Step) -> f64 {
        let first = self.knots[0];
        if t <= first.0 {
            return first.1;
        }
        let seg = self
            .knots
            .partition_point(|k| k.0 <= t)
            .saturating_sub(1)
            .min(self.knots.len() - 2);
        let (t0, s0) = self.knots[seg];
        let (t1, s1) = self.knots[seg + 1];
        s0 + (s1 - s0) * (t - t0) as f64 / (t1 - t0) as f64
    }

    /// Arc length travelled per step between `t` and `t + 1`.
    pub fn step_advance(&self, t: Step) -> f64 {
        self.s_at(t + 1) - self.s_at(t)
    }
}

/// A time-parameterised drive along a route: constant speed on the
/// approach until `entry_step`, then constant `speed` through the region.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub path: Arc<RoutePath>,
    pub motion: Motion,
    pub entry_step: Step,
    pub exit_step: Step,
    pub speed: f64,
    time_step: f64,
}

impl Plan {
    /// Plans from `(start_step, start_s)` to the region boundary at
    /// `entry_step`, then through the region at `speed`.
    pub fn new(
        path: Arc<RoutePath>,
        start: Option<(Step, f64)>,
        entry_step: Step,
        speed: f64,
        time_step: f64,
    ) -> Self {
        let per_step = speed * time_step;
        let steps = ((path.crossing_length() / per_step) - 1e-9).ceil().max(1.0) as Step;
        let exit_step = entry_step + steps;
        let mut knots = Vec::with_capacity(3);
        if let Some((t0, s0)) = start {
            if t0 < entry_step {
                knots.push((t0, s0));
            }
        }
        knots.push((entry_step, path.entry_s()));
        knots.push((exit_step, path.entry_s() + steps as f64 * per_step));
        Plan {
            path,
            motion: Motion::new(knots),
            entry_step,
            exit_step,
            speed,
            time_step,
        }
    }

    pub fn pose(&self, t: Step) -> Pose {
        let s = self.motion.s_at(t);
        let (position, heading) = self.path.point_at(s);
        Pose {
            time: t,
            position,
            heading,
            speed: self.motion.step_advance(t) / self.time_step,
        }
    }

    pub fn trace_sample(&self, t: Step) -> TraceSample {
        self.pose(t).trace_sample()
    }

    pub fn trace(&self, from: Step, to: Step) -> Vec<TraceSample> {
        (from..=to).map(|t| self.trace_sample(t)).collect()
    }

    /// In-region samples; the final sample is pinned to the exit point.
    pub fn trajectory(&self) -> Trajectory {
        let samples = (self.entry_step..=self.exit_step)
            .map(|t| {
                let s = self.motion.s_at(t).min(self.path.exit_s());
                let (position, heading) = self.path.point_at(s);
                Pose {
                    time: t,
                    position,
                    heading,
                    speed: self.motion.step_advance(t) / self.time_step,
                }
            })
            .collect();
        Trajectory {
            samples,
            entry_step: self.entry_step,
            exit_step: self.exit_step,
        }
    }
}

/// Constant-speed trajectory through the intersection region entering at
/// `arrival_step`.
pub fn plan_trajectory(
    geometry: &MapGeometry,
    origin: Lane,
    destination: Lane,
    arrival_step: Step,
    speed: f64,
) -> Result<Trajectory> {
    if !(speed > 0.0 && speed <= geometry.max_speed) {
        return Err(Error::Config(format!(
            "speed {speed} outside (0, {}]",
            geometry.max_speed
        )));
    }
    let path = Arc::new(RoutePath::new(geometry, origin, destination)?);
    Ok(Plan::new(path, None, arrival_step, speed, geometry.time_step).trajectory())
}
