use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::OccupancyGrid;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VoxelKey {
    pub ix: u32,
    pub iy: u32,
    pub iz: u32,
}

/// Sparse 3-D grid of per-class item counts overlaid on an occupancy grid.
///
/// Voxels are stored in key order so every traversal is deterministic. A
/// per-column sum over all z layers is kept alongside for fast lookups by the
/// semantic ray caster.
#[derive(Debug, Clone)]
pub struct SemanticVoxelGrid {
    xy_resolution: f64,
    z_resolution: f64,
    origin: (f64, f64),
    nx: u32,
    ny: u32,
    nz: u32,
    num_classes: usize,
    voxels: BTreeMap<VoxelKey, Vec<u32>>,
    columns: HashMap<(u32, u32), Vec<u32>>,
}

impl PartialEq for SemanticVoxelGrid {
    fn eq(&self, other: &Self) -> bool {
        self.xy_resolution == other.xy_resolution
            && self.z_resolution == other.z_resolution
            && self.origin == other.origin
            && (self.nx, self.ny, self.nz) == (other.nx, other.ny, other.nz)
            && self.num_classes == other.num_classes
            && self.voxels == other.voxels
    }
}

impl SemanticVoxelGrid {
    /// Empty grid covering the footprint of `occ`, `height` meters tall.
    pub fn for_grid(
        occ: &OccupancyGrid,
        xy_resolution: f64,
        z_resolution: f64,
        height: f64,
        num_classes: usize,
    ) -> Result<Self> {
        if !(xy_resolution > 0.0) || !(z_resolution > 0.0) {
            return Err(invalid("semantic resolution", "must be > 0"));
        }
        if !(height > 0.0) {
            return Err(invalid("height", "must be > 0"));
        }
        if num_classes == 0 {
            return Err(invalid("num_classes", "must be >= 1"));
        }
        let (w, h) = occ.extent();
        let nx = (w / xy_resolution - 1e-9).ceil().max(1.0) as u32;
        let ny = (h / xy_resolution - 1e-9).ceil().max(1.0) as u32;
        let nz = (height / z_resolution - 1e-9).ceil().max(1.0) as u32;
        Ok(Self::with_dims(
            xy_resolution,
            z_resolution,
            occ.origin(),
            (nx, ny, nz),
            num_classes,
        ))
    }

    pub(crate) fn with_dims(
        xy_resolution: f64,
        z_resolution: f64,
        origin: (f64, f64),
        (nx, ny, nz): (u32, u32, u32),
        num_classes: usize,
    ) -> Self {
        Self {
            xy_resolution,
            z_resolution,
            origin,
            nx,
            ny,
            nz,
            num_classes,
            voxels: BTreeMap::new(),
            columns: HashMap::new(),
        }
    }

    pub fn xy_resolution(&self) -> f64 {
        self.xy_resolution
    }

    pub fn z_resolution(&self) -> f64 {
        self.z_resolution
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn dims(&self) -> (u32, u32, u32) {
        (self.nx, self.ny, self.nz)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// True when the voxel footprint covers the whole occupancy grid.
    pub fn covers(&self, occ: &OccupancyGrid) -> bool {
        let (w, h) = occ.extent();
        let eps = 1e-9;
        self.origin == occ.origin()
            && self.nx as f64 * self.xy_resolution + eps >= w
            && self.ny as f64 * self.xy_resolution + eps >= h
    }

    /// Column containing a planar point.
    pub fn column_of(&self, x: f64, y: f64) -> Option<(u32, u32)> {
        let fx = ((x - self.origin.0) / self.xy_resolution).floor();
        let fy = ((y - self.origin.1) / self.xy_resolution).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.nx as f64 || fy >= self.ny as f64 {
            return None;
        }
        Some((fx as u32, fy as u32))
    }

    /// Voxel containing a point; heights outside the grid clamp to the
    /// nearest layer.
    pub fn voxel_of(&self, point: [f64; 3]) -> Result<VoxelKey> {
        let (ix, iy) = self.column_of(point[0], point[1]).ok_or(Error::OutsideGrid {
            x: point[0],
            y: point[1],
        })?;
        let fz = (point[2] / self.z_resolution).floor();
        let iz = if fz.is_nan() || fz < 0.0 {
            0
        } else {
            (fz as u64).min(self.nz as u64 - 1) as u32
        };
        Ok(VoxelKey { ix, iy, iz })
    }

    pub fn voxel_center(&self, key: VoxelKey) -> [f64; 3] {
        [
            self.origin.0 + (key.ix as f64 + 0.5) * self.xy_resolution,
            self.origin.1 + (key.iy as f64 + 0.5) * self.xy_resolution,
            (key.iz as f64 + 0.5) * self.z_resolution,
        ]
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.num_classes {
            return Err(Error::InvalidClass {
                class,
                num_classes: self.num_classes,
            });
        }
        Ok(())
    }

    /// Adds one observed item of `class` at `point`.
    pub fn insert_detection(&mut self, point: [f64; 3], class: usize) -> Result<()> {
        self.check_class(class)?;
        let key = self.voxel_of(point)?;
        self.add_count(key, class, 1)
    }

    pub fn add_count(&mut self, key: VoxelKey, class: usize, n: u32) -> Result<()> {
        self.check_class(class)?;
        if key.ix >= self.nx || key.iy >= self.ny || key.iz >= self.nz {
            return Err(Error::MapMismatch(format!("voxel {key:?} outside grid")));
        }
        if n == 0 {
            return Ok(());
        }
        let c = self.num_classes;
        self.voxels.entry(key).or_insert_with(|| vec![0; c])[class] += n;
        self.columns
            .entry((key.ix, key.iy))
            .or_insert_with(|| vec![0; c])[class] += n;
        Ok(())
    }

    /// Removes one item of `class` from `key`; false when there is none.
    pub fn remove_one(&mut self, key: VoxelKey, class: usize) -> bool {
        let Some(h) = self.voxels.get_mut(&key) else {
            return false;
        };
        if class >= h.len() || h[class] == 0 {
            return false;
        }
        h[class] -= 1;
        if h.iter().all(|n| *n == 0) {
            self.voxels.remove(&key);
        }
        let col = (key.ix, key.iy);
        if let Some(ch) = self.columns.get_mut(&col) {
            ch[class] -= 1;
            if ch.iter().all(|n| *n == 0) {
                self.columns.remove(&col);
            }
        }
        true
    }

    pub fn histogram(&self, key: VoxelKey) -> Option<&[u32]> {
        self.voxels.get(&key).map(Vec::as_slice)
    }

    /// Counts summed over every z layer of a column.
    pub fn column_histogram(&self, ix: u32, iy: u32) -> Option<&[u32]> {
        self.columns.get(&(ix, iy)).map(Vec::as_slice)
    }

    /// Non-empty voxels in key order.
    pub fn voxels(&self) -> impl Iterator<Item = (VoxelKey, &[u32])> {
        self.voxels.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn total_count(&self) -> u64 {
        self.voxels
            .values()
            .flat_map(|h| h.iter())
            .map(|&n| n as u64)
            .sum()
    }

    pub fn class_totals(&self) -> Vec<u64> {
        let mut t = vec![0u64; self.num_classes];
        for h in self.voxels.values() {
            for (c, n) in h.iter().enumerate() {
                t[c] += *n as u64;
            }
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid() -> SemanticVoxelGrid {
        let occ = OccupancyGrid::new(40, 30, 0.1, (0.0, 0.0)).unwrap();
        SemanticVoxelGrid::for_grid(&occ, 0.2, 0.3, 2.4, 14).unwrap()
    }

    #[test]
    fn single_insert() {
        let mut g = grid();
        g.insert_detection([1.0, 1.0, 0.5], 3).unwrap();
        let key = g.voxel_of([1.0, 1.0, 0.5]).unwrap();
        let h = g.histogram(key).unwrap();
        assert_eq!(h[3], 1);
        assert_eq!(h.iter().sum::<u32>(), 1);
    }

    #[test]
    fn accumulates() {
        let mut g = grid();
        g.insert_detection([1.0, 1.0, 0.5], 3).unwrap();
        g.insert_detection([1.05, 1.02, 0.55], 3).unwrap();
        let key = g.voxel_of([1.0, 1.0, 0.5]).unwrap();
        assert_eq!(g.histogram(key).unwrap()[3], 2);
        assert_eq!(g.column_histogram(key.ix, key.iy).unwrap()[3], 2);
    }

    #[test]
    fn clamps_height() {
        let mut g = grid();
        assert_eq!(g.dims().2, 8);
        g.insert_detection([1.0, 1.0, -0.1], 0).unwrap();
        g.insert_detection([1.0, 1.0, 9.0], 0).unwrap();
        let keys: Vec<_> = g.voxels().map(|(k, _)| k.iz).collect();
        assert_eq!(keys, vec![0, 7]);
    }

    #[test]
    fn rejects_bad_class_and_point() {
        let mut g = grid();
        assert!(matches!(
            g.insert_detection([1.0, 1.0, 0.5], 14),
            Err(Error::InvalidClass { .. })
        ));
        assert!(g.insert_detection([-1.0, 1.0, 0.5], 1).is_err());
    }

    #[test]
    fn footprint_covers_grid() {
        let occ = OccupancyGrid::new(41, 31, 0.1, (1.0, -2.0)).unwrap();
        let g = SemanticVoxelGrid::for_grid(&occ, 0.2, 0.3, 2.4, 14).unwrap();
        assert_eq!(g.dims(), (21, 16, 8));
        assert!(g.covers(&occ));
    }

    proptest! {
        #[test]
        fn insert_preserves_total(points in proptest::collection::vec(
            (0.0f64..3.99, 0.0f64..2.99, -1.0f64..3.0, 0usize..14), 1..50)) {
            let mut g = grid();
            for (i, (x, y, z, c)) in points.iter().enumerate() {
                g.insert_detection([*x, *y, *z], *c).unwrap();
                prop_assert_eq!(g.total_count(), i as u64 + 1);
            }
            let col_total: u64 = g.columns.values().flat_map(|h| h.iter()).map(|&n| n as u64).sum();
            prop_assert_eq!(col_total, g.total_count());
        }
    }
}
