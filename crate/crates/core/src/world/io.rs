//! JSON map files.
//!
//! ```json
//! {
//!   "occupancy": {"resolution": 0.1, "origin": [0, 0], "width": 3, "height": 2,
//!                 "cells": "..#.?."},
//!   "semantic":  {"xy_resolution": 0.2, "z_resolution": 0.3, "num_classes": 14,
//!                 "z_layers": 8,
//!                 "voxels": [{"ix": 0, "iy": 0, "iz": 1, "counts": [0, 2, ...]}]}
//! }
//! ```
//!
//! `cells` is row-major starting from the row at the lowest `y`. The semantic
//! grid shares the occupancy origin and must cover its footprint exactly
//! (rounded up to whole voxels).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Cell, OccupancyGrid, SemanticVoxelGrid, VoxelKey};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyFile {
    pub resolution: f64,
    pub origin: [f64; 2],
    pub width: usize,
    pub height: usize,
    pub cells: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelEntry {
    pub ix: u32,
    pub iy: u32,
    pub iz: u32,
    pub counts: Vec<u32>,
}

fn default_layers() -> u32 {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticFile {
    pub xy_resolution: f64,
    pub z_resolution: f64,
    pub num_classes: usize,
    #[serde(default = "default_layers")]
    pub z_layers: u32,
    pub voxels: Vec<VoxelEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapFile {
    pub occupancy: OccupancyFile,
    pub semantic: SemanticFile,
}

impl From<&OccupancyGrid> for OccupancyFile {
    fn from(g: &OccupancyGrid) -> Self {
        Self {
            resolution: g.resolution(),
            origin: [g.origin().0, g.origin().1],
            width: g.width(),
            height: g.height(),
            cells: g.cells().iter().map(|c| c.to_char()).collect(),
        }
    }
}

impl TryFrom<&OccupancyFile> for OccupancyGrid {
    type Error = Error;

    fn try_from(f: &OccupancyFile) -> Result<Self> {
        let cells = f
            .cells
            .chars()
            .enumerate()
            .map(|(i, ch)| {
                Cell::from_char(ch)
                    .ok_or_else(|| Error::MapMismatch(format!("bad cell character {ch:?} at {i}")))
            })
            .collect::<Result<Vec<_>>>()?;
        OccupancyGrid::from_cells(f.width, f.height, f.resolution, (f.origin[0], f.origin[1]), cells)
    }
}

impl From<&SemanticVoxelGrid> for SemanticFile {
    fn from(g: &SemanticVoxelGrid) -> Self {
        Self {
            xy_resolution: g.xy_resolution(),
            z_resolution: g.z_resolution(),
            num_classes: g.num_classes(),
            z_layers: g.dims().2,
            voxels: g
                .voxels()
                .map(|(k, h)| VoxelEntry {
                    ix: k.ix,
                    iy: k.iy,
                    iz: k.iz,
                    counts: h.to_vec(),
                })
                .collect(),
        }
    }
}

impl MapFile {
    pub fn new(occ: &OccupancyGrid, sem: &SemanticVoxelGrid) -> Self {
        Self {
            occupancy: occ.into(),
            semantic: sem.into(),
        }
    }

    /// Decodes both layers, rejecting semantic grids whose extents do not
    /// match the occupancy footprint.
    pub fn decode(&self) -> Result<(OccupancyGrid, SemanticVoxelGrid)> {
        let occ = OccupancyGrid::try_from(&self.occupancy)?;
        let s = &self.semantic;
        let height = s.z_layers as f64 * s.z_resolution;
        let mut sem = SemanticVoxelGrid::for_grid(&occ, s.xy_resolution, s.z_resolution, height, s.num_classes)?;
        let (nx, ny, nz) = sem.dims();
        for v in &s.voxels {
            if v.ix >= nx || v.iy >= ny || v.iz >= nz {
                return Err(Error::MapMismatch(format!(
                    "voxel ({}, {}, {}) outside {nx}x{ny}x{nz} semantic extents",
                    v.ix, v.iy, v.iz
                )));
            }
            if v.counts.len() != s.num_classes {
                return Err(Error::MapMismatch(format!(
                    "voxel ({}, {}, {}) has {} counts for {} classes",
                    v.ix,
                    v.iy,
                    v.iz,
                    v.counts.len(),
                    s.num_classes
                )));
            }
            let key = VoxelKey {
                ix: v.ix,
                iy: v.iy,
                iz: v.iz,
            };
            for (class, &n) in v.counts.iter().enumerate() {
                sem.add_count(key, class, n)?;
            }
        }
        Ok((occ, sem))
    }
}

pub fn save_map(path: impl AsRef<Path>, occ: &OccupancyGrid, sem: &SemanticVoxelGrid) -> Result<()> {
    let json = serde_json::to_string(&MapFile::new(occ, sem))?;
    fs::write(path, json)?;
    Ok(())
}

pub fn load_map(path: impl AsRef<Path>) -> Result<(OccupancyGrid, SemanticVoxelGrid)> {
    let file: MapFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    file.decode()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (OccupancyGrid, SemanticVoxelGrid) {
        let mut occ = OccupancyGrid::new(7, 5, 0.1, (0.5, -1.0)).unwrap();
        occ.set(3, 2, Cell::Occupied);
        occ.set(0, 4, Cell::Unknown);
        let mut sem = SemanticVoxelGrid::for_grid(&occ, 0.2, 0.3, 2.4, 4).unwrap();
        sem.insert_detection([0.85, -0.75, 0.4], 2).unwrap();
        sem.insert_detection([0.85, -0.75, 1.4], 1).unwrap();
        (occ, sem)
    }

    #[test]
    fn round_trip_through_file() {
        let (occ, sem) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.json");
        save_map(&path, &occ, &sem).unwrap();
        let (o2, s2) = load_map(&path).unwrap();
        assert_eq!(o2, occ);
        assert_eq!(s2, sem);
    }

    #[test]
    fn cell_string_layout() {
        let (occ, sem) = sample();
        let f = MapFile::new(&occ, &sem);
        assert_eq!(f.occupancy.cells.len(), 35);
        assert_eq!(f.occupancy.cells.chars().nth(2 * 7 + 3), Some('#'));
        assert_eq!(f.occupancy.cells.chars().nth(4 * 7), Some('?'));
    }

    #[test]
    fn rejects_mismatched_extents() {
        let (occ, sem) = sample();
        let mut f = MapFile::new(&occ, &sem);
        f.semantic.voxels[0].ix = 4; // grid is 0.7 m wide -> 4 columns (0..=3)
        assert!(matches!(f.decode(), Err(Error::MapMismatch(_))));

        let mut f = MapFile::new(&occ, &sem);
        f.semantic.voxels[0].counts.push(1);
        assert!(matches!(f.decode(), Err(Error::MapMismatch(_))));

        let mut f = MapFile::new(&occ, &sem);
        f.occupancy.cells.pop();
        assert!(f.decode().is_err());

        let mut f = MapFile::new(&occ, &sem);
        f.occupancy.cells.replace_range(0..1, "x");
        assert!(f.decode().is_err());
    }
}
