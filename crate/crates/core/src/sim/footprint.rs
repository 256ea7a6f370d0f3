//! Rasterized space-time footprints.
//!
//! A footprint is one cell mask per simulation step. For a buffer `b`, each
//! sample's body rectangle is inflated by `b · grid_cell` meters on every
//! side before rasterization, and each step's cells are also claimed for
//! `round(b)` steps before and after.

use crate::monitor::Step;
use crate::sim::geometry::{MapGeometry, Point, VehicleBody};
use crate::sim::trajectory::{Pose, Trajectory};

const WORD: usize = 64;
const EDGE_EPS: f64 = 1e-9;

/// Fixed-size bitset over the cells of the reservation grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CellMask {
    words: Vec<u64>,
}

impl CellMask {
    pub fn empty(cells: usize) -> Self {
        CellMask {
            words: vec![0; cells.div_ceil(WORD)],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn contains(&self, cell: usize) -> bool {
        self.words[cell / WORD] >> (cell % WORD) & 1 == 1
    }

    pub fn insert(&mut self, cell: usize) {
        self.words[cell / WORD] |= 1 << (cell % WORD);
    }

    /// Sets bits `lo..=hi`.
    pub fn insert_range(&mut self, lo: usize, hi: usize) {
        let (wl, wh) = (lo / WORD, hi / WORD);
        let lo_mask = u64::MAX << (lo % WORD);
        let hi_mask = u64::MAX >> (WORD - 1 - hi % WORD);
        if wl == wh {
            self.words[wl] |= lo_mask & hi_mask;
        } else {
            self.words[wl] |= lo_mask;
            for w in &mut self.words[wl + 1..wh] {
                *w = u64::MAX;
            }
            self.words[wh] |= hi_mask;
        }
    }

    pub fn union_with(&mut self, other: &CellMask) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    pub fn subtract(&mut self, other: &CellMask) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= !b;
        }
    }

    pub fn intersects(&self, other: &CellMask) -> bool {
        self.words.iter().zip(&other.words).any(|(a, b)| a & b != 0)
    }

    pub fn is_subset_of(&self, other: &CellMask) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut bits = w;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let b = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(wi * WORD + b)
            })
        })
    }
}

/// Grid cell coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tile {
    pub cell_x: usize,
    pub cell_y: usize,
    pub step: Step,
}

/// Occupied cells per step for a contiguous range of steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Footprint {
    cells_x: usize,
    cells_y: usize,
    start: Step,
    layers: Vec<CellMask>,
}

impl Footprint {
    pub fn empty(geometry: &MapGeometry) -> Self {
        let (cells_x, cells_y) = geometry.grid_dims();
        Footprint {
            cells_x,
            cells_y,
            start: 0,
            layers: Vec::new(),
        }
    }

    pub(crate) fn from_layers(dims: (usize, usize), start: Step, layers: Vec<CellMask>) -> Self {
        Footprint {
            cells_x: dims.0,
            cells_y: dims.1,
            start,
            layers,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.cells_x, self.cells_y)
    }

    pub fn start(&self) -> Step {
        self.start
    }

    pub fn end(&self) -> Step {
        self.start + self.layers.len() as Step - 1
    }

    pub fn layers(&self) -> impl Iterator<Item = (Step, &CellMask)> {
        self.layers
            .iter()
            .enumerate()
            .map(move |(i, m)| (self.start + i as Step, m))
    }

    pub fn layer(&self, step: Step) -> Option<&CellMask> {
        let i = step.checked_sub(self.start)?;
        usize::try_from(i).ok().and_then(|i| self.layers.get(i))
    }

    /// Same footprint moved `delta` steps in time.
    pub fn shifted(&self, delta: Step) -> Footprint {
        Footprint {
            start: self.start + delta,
            ..self.clone()
        }
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(CellMask::count).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.iter().all(CellMask::is_empty)
    }

    pub fn contains(&self, tile: Tile) -> bool {
        tile.cell_x < self.cells_x
            && tile.cell_y < self.cells_y
            && self
                .layer(tile.step)
                .is_some_and(|m| m.contains(tile.cell_y * self.cells_x + tile.cell_x))
    }

    pub fn tiles(&self) -> impl Iterator<Item = Tile> + '_ {
        let cx = self.cells_x;
        self.layers().flat_map(move |(step, mask)| {
            mask.iter().map(move |c| Tile {
                cell_x: c % cx,
                cell_y: c / cx,
                step,
            })
        })
    }

    pub fn is_subset_of(&self, other: &Footprint) -> bool {
        self.layers()
            .all(|(t, m)| m.is_empty() || other.layer(t).is_some_and(|o| m.is_subset_of(o)))
    }
}

/// Axis-aligned bounding box of a body at a pose.
pub fn body_bounds(pose: &Pose, body: &VehicleBody) -> (Point, Point) {
    let (c, s) = (pose.heading.x.abs(), pose.heading.y.abs());
    let hx = c * body.length / 2.0 + s * body.width / 2.0;
    let hy = s * body.length / 2.0 + c * body.width / 2.0;
    (
        Point::new(pose.position.x - hx, pose.position.y - hy),
        Point::new(pose.position.x + hx, pose.position.y + hy),
    )
}

fn cell_span(lo: f64, hi: f64, origin: f64, cell: f64, n: usize) -> Option<(usize, usize)> {
    let first = ((lo - origin) / cell + EDGE_EPS).floor();
    let last = ((hi - origin) / cell - EDGE_EPS).ceil() - 1.0;
    let first = first.max(0.0);
    let last = last.min(n as f64 - 1.0);
    (first <= last).then_some((first as usize, last as usize))
}

fn rasterize(
    pose: &Pose,
    body: &VehicleBody,
    inflate: f64,
    geometry: &MapGeometry,
    mask: &mut CellMask,
) {
    let (cells_x, cells_y) = geometry.grid_dims();
    let (lo, hi) = body_bounds(pose, body);
    let origin = -geometry.grid_margin;
    let xs = cell_span(lo.x - inflate, hi.x + inflate, origin, geometry.grid_cell, cells_x);
    let ys = cell_span(lo.y - inflate, hi.y + inflate, origin, geometry.grid_cell, cells_y);
    if let (Some((x0, x1)), Some((y0, y1))) = (xs, ys) {
        for y in y0..=y1 {
            mask.insert_range(y * cells_x + x0, y * cells_x + x1);
        }
    }
}

/// Buffer-inflated space-time tiles covered by a vehicle along `traj`.
pub fn footprint(
    traj: &Trajectory,
    buffer: f64,
    body: &VehicleBody,
    geometry: &MapGeometry,
) -> Footprint {
    let buffer = buffer.max(0.0);
    let (cells_x, cells_y) = geometry.grid_dims();
    let cells = cells_x * cells_y;
    let spread = buffer.round() as Step;
    let inflate = buffer * geometry.grid_cell;
    let mut fp = Footprint {
        cells_x,
        cells_y,
        start: traj.entry_step - spread,
        layers: vec![CellMask::empty(cells); (traj.exit_step - traj.entry_step + 2 * spread + 1) as usize],
    };
    let mut sample_mask = CellMask::empty(cells);
    for pose in &traj.samples {
        sample_mask.words.fill(0);
        rasterize(pose, body, inflate, geometry, &mut sample_mask);
        let first = (pose.time - spread - fp.start) as usize;
        for layer in &mut fp.layers[first..=first + 2 * spread as usize] {
            layer.union_with(&sample_mask);
        }
    }
    fp
}
