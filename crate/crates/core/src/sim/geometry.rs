use std::fmt;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point) -> f64 {
        (self - other).norm()
    }

    pub fn normalized(self) -> Point {
        let n = self.norm();
        if n > 0.0 {
            Point::new(self.x / n, self.y / n)
        } else {
            self
        }
    }

    /// Unit vector pointing to the right of `self` when `self` is a heading.
    pub fn right(self) -> Point {
        Point::new(self.y, -self.x)
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }
}

/// One arm of the four-way intersection, named by compass side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Road {
    North,
    East,
    South,
    West,
}

impl Road {
    pub const ALL: [Road; 4] = [Road::North, Road::East, Road::South, Road::West];

    /// Unit vector from the intersection centre towards this arm.
    pub fn outward(self) -> Point {
        match self {
            Road::North => Point::new(0.0, 1.0),
            Road::East => Point::new(1.0, 0.0),
            Road::South => Point::new(0.0, -1.0),
            Road::West => Point::new(-1.0, 0.0),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Road {
        Road::ALL[i % 4]
    }
}

impl fmt::Display for Road {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Road::North => "N",
            Road::East => "E",
            Road::South => "S",
            Road::West => "W",
        };
        f.write_str(s)
    }
}

/// A lane on a road; index 0 is the lane closest to the centre line.
///
/// Used for both incoming (origin) and outgoing (destination) lanes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Lane {
    pub road: Road,
    pub index: u8,
}

impl Lane {
    pub const fn new(road: Road, index: u8) -> Self {
        Lane { road, index }
    }
}

impl fmt::Display for Lane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.road, self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RouteClass {
    Straight,
    Left,
    Right,
}

impl RouteClass {
    pub const ALL: [RouteClass; 3] = [RouteClass::Straight, RouteClass::Left, RouteClass::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            RouteClass::Straight => "straight",
            RouteClass::Left => "left",
            RouteClass::Right => "right",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        RouteClass::ALL.into_iter().find(|c| c.name() == s)
    }

    /// Classifies an (origin, destination) pair; same-road pairs are rejected.
    pub fn of(origin: Lane, destination: Lane) -> Result<Self> {
        if origin.road == destination.road {
            return Err(Error::SameRoad(format!("{origin} -> {destination}")));
        }
        let heading_in = origin.road.outward() * -1.0;
        let heading_out = destination.road.outward();
        let turn = heading_in.cross(heading_out);
        Ok(if turn.abs() < 0.5 {
            RouteClass::Straight
        } else if turn > 0.0 {
            RouteClass::Left
        } else {
            RouteClass::Right
        })
    }
}

/// Vehicle footprint dimensions in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleBody {
    pub length: f64,
    pub width: f64,
}

impl Default for VehicleBody {
    fn default() -> Self {
        VehicleBody {
            length: 4.0,
            width: 2.0,
        }
    }
}

/// Static map description: a square intersection region with approach roads.
///
/// World coordinates put the intersection region at `[0, extent]²`; the
/// reservation grid additionally covers `grid_margin` meters around it so
/// vehicle bodies straddling the boundary are fully rasterized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapGeometry {
    pub lanes_per_road: u8,
    pub lane_width: f64,
    pub intersection_extent: f64,
    pub approach_length: f64,
    pub grid_cell: f64,
    pub grid_margin: f64,
    pub time_step: f64,
    pub max_speed: f64,
    /// Distance before the intersection boundary where unapproved vehicles wait.
    pub hold_gap: f64,
}

impl Default for MapGeometry {
    fn default() -> Self {
        MapGeometry {
            lanes_per_road: 3,
            lane_width: 6.0,
            intersection_extent: 36.0,
            approach_length: 100.0,
            grid_cell: 1.0,
            grid_margin: 4.0,
            time_step: 0.25,
            max_speed: 16.0,
            hold_gap: 3.0,
        }
    }
}

fn is_multiple(value: f64, unit: f64) -> bool {
    let q = value / unit;
    (q - q.round()).abs() < 1e-9
}

impl MapGeometry {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lane_width", self.lane_width),
            ("intersection_extent", self.intersection_extent),
            ("approach_length", self.approach_length),
            ("grid_cell", self.grid_cell),
            ("time_step", self.time_step),
            ("max_speed", self.max_speed),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("geometry.{name} must be positive")));
            }
        }
        if self.lanes_per_road == 0 {
            return Err(Error::Config("geometry.lanes_per_road must be positive".into()));
        }
        if !is_multiple(self.intersection_extent, self.grid_cell) {
            return Err(Error::Config(
                "intersection_extent must be a multiple of grid_cell".into(),
            ));
        }
        if self.grid_margin < 0.0 || !is_multiple(self.grid_margin, self.grid_cell) {
            return Err(Error::Config(
                "grid_margin must be a non-negative multiple of grid_cell".into(),
            ));
        }
        let road_width = 2.0 * f64::from(self.lanes_per_road) * self.lane_width;
        if road_width > self.intersection_extent + 1e-9 {
            return Err(Error::Config(format!(
                "{} lanes of width {} do not fit an intersection of extent {}",
                2 * self.lanes_per_road,
                self.lane_width,
                self.intersection_extent
            )));
        }
        if self.hold_gap < 0.0 || self.hold_gap >= self.approach_length {
            return Err(Error::Config("hold_gap must lie in [0, approach_length)".into()));
        }
        Ok(())
    }

    pub fn center(&self) -> Point {
        let h = self.intersection_extent / 2.0;
        Point::new(h, h)
    }

    pub fn grid_dims(&self) -> (usize, usize) {
        let n = ((self.intersection_extent + 2.0 * self.grid_margin) / self.grid_cell).round() as usize;
        (n, n)
    }

    pub fn lanes(&self, road: Road) -> impl Iterator<Item = Lane> {
        (0..self.lanes_per_road).map(move |i| Lane::new(road, i))
    }

    pub fn check_lane(&self, lane: Lane) -> Result<()> {
        if lane.index < self.lanes_per_road {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "lane {lane} does not exist ({} lanes per road)",
                self.lanes_per_road
            )))
        }
    }

    fn lane_offset(&self, lane: Lane) -> f64 {
        (f64::from(lane.index) + 0.5) * self.lane_width
    }

    /// Boundary point and heading where an incoming lane enters the region.
    pub fn entry_pose(&self, lane: Lane) -> (Point, Point) {
        let heading = lane.road.outward() * -1.0;
        let point = self.center()
            + lane.road.outward() * (self.intersection_extent / 2.0)
            + heading.right() * self.lane_offset(lane);
        (point, heading)
    }

    /// Boundary point and heading where an outgoing lane leaves the region.
    pub fn exit_pose(&self, lane: Lane) -> (Point, Point) {
        let heading = lane.road.outward();
        let point = self.center()
            + lane.road.outward() * (self.intersection_extent / 2.0)
            + heading.right() * self.lane_offset(lane);
        (point, heading)
    }

    pub fn contains(&self, p: Point) -> bool {
        let e = self.intersection_extent;
        (0.0..=e).contains(&p.x) && (0.0..=e).contains(&p.y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry_is_valid() {
        let g = MapGeometry::default();
        g.validate().unwrap();
        assert_eq!(g.grid_dims(), (44, 44));
    }

    #[test]
    fn invalid_geometry() {
        let g = MapGeometry {
            intersection_extent: 36.5,
            ..MapGeometry::default()
        };
        assert!(g.validate().is_err());
        let g = MapGeometry {
            lane_width: 7.0,
            ..MapGeometry::default()
        };
        assert!(g.validate().is_err());
    }

    #[test]
    fn lanes_use_right_hand_traffic() {
        let g = MapGeometry::default();
        let (p, h) = g.entry_pose(Lane::new(Road::South, 0));
        assert_eq!(p, Point::new(21.0, 0.0));
        assert_eq!(h, Point::new(0.0, 1.0));
        let (q, h) = g.exit_pose(Lane::new(Road::East, 2));
        assert_eq!(q, Point::new(36.0, 3.0));
        assert_eq!(h, Point::new(1.0, 0.0));
        let (q, _) = g.exit_pose(Lane::new(Road::North, 0));
        assert_eq!(q, Point::new(21.0, 36.0));
    }

    #[test]
    fn route_classes() {
        let s = Lane::new(Road::South, 1);
        assert_eq!(RouteClass::of(s, Lane::new(Road::North, 1)).unwrap(), RouteClass::Straight);
        assert_eq!(RouteClass::of(s, Lane::new(Road::East, 0)).unwrap(), RouteClass::Right);
        assert_eq!(RouteClass::of(s, Lane::new(Road::West, 2)).unwrap(), RouteClass::Left);
        assert_eq!(
            RouteClass::of(Lane::new(Road::East, 0), Lane::new(Road::West, 0)).unwrap(),
            RouteClass::Straight
        );
        assert!(matches!(
            RouteClass::of(s, Lane::new(Road::South, 0)),
            Err(Error::SameRoad(_))
        ));
    }
}
