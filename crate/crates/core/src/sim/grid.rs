use std::collections::BTreeMap;

use crate::monitor::Step;
use crate::sim::footprint::{CellMask, Footprint, Tile};
use crate::sim::geometry::MapGeometry;
use crate::sim::trajectory::Trajectory;
use crate::store::VehicleId;

/// A granted space-time reservation.
#[derive(Debug, Clone, PartialEq)]
pub struct Reservation {
    pub vehicle_id: VehicleId,
    pub tiles: Footprint,
    pub buffer: f64,
    /// The in-region trajectory the tiles were computed from.
    pub trajectory: Trajectory,
}

/// Space-time occupancy of the intersection; every tile has at most one owner.
#[derive(Debug, Clone)]
pub struct ReservationGrid {
    cells: usize,
    occupied: BTreeMap<Step, CellMask>,
    owners: BTreeMap<VehicleId, Footprint>,
}

impl ReservationGrid {
    pub fn new(geometry: &MapGeometry) -> Self {
        let (cx, cy) = geometry.grid_dims();
        ReservationGrid {
            cells: cx * cy,
            occupied: BTreeMap::new(),
            owners: BTreeMap::new(),
        }
    }

    /// True if no tile of `tiles` is owned by a vehicle other than `vehicle`.
    pub fn is_free_for(&self, vehicle: VehicleId, tiles: &Footprint) -> bool {
        let own = self.owners.get(&vehicle);
        tiles.layers().all(|(step, mask)| {
            let Some(taken) = self.occupied.get(&step) else {
                return true;
            };
            match own.and_then(|fp| fp.layer(step)) {
                None => !mask.intersects(taken),
                Some(mine) => {
                    let mut others = taken.clone();
                    others.subtract(mine);
                    !mask.intersects(&others)
                }
            }
        })
    }

    /// Atomically claims every tile, or nothing if any tile belongs to
    /// another vehicle.
    pub fn try_reserve(&mut self, vehicle: VehicleId, tiles: &Footprint) -> bool {
        if !self.is_free_for(vehicle, tiles) {
            return false;
        }
        for (step, mask) in tiles.layers() {
            if mask.is_empty() {
                continue;
            }
            self.occupied
                .entry(step)
                .or_insert_with(|| CellMask::empty(self.cells))
                .union_with(mask);
        }
        match self.owners.get_mut(&vehicle) {
            None => {
                self.owners.insert(vehicle, tiles.clone());
            }
            Some(existing) => *existing = merge(existing, tiles),
        }
        true
    }

    /// Releases every tile held by `vehicle`.
    pub fn release(&mut self, vehicle: VehicleId) -> Option<Footprint> {
        let fp = self.owners.remove(&vehicle)?;
        for (step, mask) in fp.layers() {
            if let Some(taken) = self.occupied.get_mut(&step) {
                taken.subtract(mask);
                if taken.is_empty() {
                    self.occupied.remove(&step);
                }
            }
        }
        Some(fp)
    }

    pub fn owner(&self, tile: Tile) -> Option<VehicleId> {
        self.owners
            .iter()
            .find(|(_, fp)| fp.contains(tile))
            .map(|(id, _)| *id)
    }

    pub fn owned_tiles(&self, vehicle: VehicleId) -> usize {
        self.owners.get(&vehicle).map_or(0, Footprint::len)
    }

    pub fn occupied_tiles(&self) -> usize {
        self.occupied.values().map(CellMask::count).sum()
    }
}

fn merge(a: &Footprint, b: &Footprint) -> Footprint {
    let start = a.start().min(b.start());
    let end = a.end().max(b.end());
    let mut layers = Vec::with_capacity((end - start + 1) as usize);
    let cells = a.dims().0 * a.dims().1;
    for t in start..=end {
        let mut m = CellMask::empty(cells);
        if let Some(l) = a.layer(t) {
            m.union_with(l);
        }
        if let Some(l) = b.layer(t) {
            m.union_with(l);
        }
        layers.push(m);
    }
    Footprint::from_layers(a.dims(), start, layers)
}
