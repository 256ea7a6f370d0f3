use std::collections::{BTreeMap, BTreeSet};

use crate::sim::footprint::body_bounds;
use crate::sim::geometry::{Point, VehicleBody};
use crate::sim::trajectory::{Pose, Trajectory};
use crate::store::VehicleId;

/// Minimum penetration depth (meters) counted as a collision; touching
/// rectangles do not collide.
pub const CONTACT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct MovingBody<'a> {
    pub id: VehicleId,
    pub body: VehicleBody,
    pub trajectory: &'a Trajectory,
}

/// Corners of the oriented body rectangle.
pub fn corners(pose: &Pose, body: &VehicleBody) -> [Point; 4] {
    let f = pose.heading * (body.length / 2.0);
    let r = pose.heading.right() * (body.width / 2.0);
    let c = pose.position;
    [c + f + r, c + f - r, c - f - r, c - f + r]
}

fn project(points: &[Point; 4], axis: Point) -> (f64, f64) {
    points
        .iter()
        .map(|p| p.dot(axis))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Separating-axis test for two oriented rectangles.
pub fn bodies_overlap(a: &Pose, body_a: &VehicleBody, b: &Pose, body_b: &VehicleBody) -> bool {
    let (alo, ahi) = body_bounds(a, body_a);
    let (blo, bhi) = body_bounds(b, body_b);
    if alo.x >= bhi.x - CONTACT_EPS
        || blo.x >= ahi.x - CONTACT_EPS
        || alo.y >= bhi.y - CONTACT_EPS
        || blo.y >= ahi.y - CONTACT_EPS
    {
        return false;
    }
    let ca = corners(a, body_a);
    let cb = corners(b, body_b);
    let axes = [a.heading, a.heading.right(), b.heading, b.heading.right()];
    axes.iter().all(|&axis| {
        let (amin, amax) = project(&ca, axis);
        let (bmin, bmax) = project(&cb, axis);
        amax.min(bmax) - amin.max(bmin) > CONTACT_EPS
    })
}

/// Every pair of vehicles whose true bodies overlap at some common step.
/// Pairs are ordered `(smaller id, larger id)`.
pub fn detect_collisions(vehicles: &[MovingBody<'_>]) -> BTreeSet<(VehicleId, VehicleId)> {
    let mut by_step: BTreeMap<i64, Vec<(usize, &Pose)>> = BTreeMap::new();
    for (i, v) in vehicles.iter().enumerate() {
        for pose in &v.trajectory.samples {
            by_step.entry(pose.time).or_default().push((i, pose));
        }
    }
    let mut pairs = BTreeSet::new();
    for present in by_step.values() {
        for (k, &(i, pa)) in present.iter().enumerate() {
            for &(j, pb) in &present[k + 1..] {
                let (a, b) = (&vehicles[i], &vehicles[j]);
                if a.id == b.id {
                    continue;
                }
                let key = if a.id < b.id { (a.id, b.id) } else { (b.id, a.id) };
                if !pairs.contains(&key) && bodies_overlap(pa, &a.body, pb, &b.body) {
                    pairs.insert(key);
                }
            }
        }
    }
    pairs
}
