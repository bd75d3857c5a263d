//! Occupancy grid and range casting.
//!
//! Two casting backends share one contract: [`OccupancyGrid`] marches the ray
//! cell by cell, and [`DistanceField`] skips through open space using a
//! precomputed Euclidean clearance map before finishing with the same cell
//! march near obstacles. Both report the range at which the ray enters the
//! first blocking cell.

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cell {
    Free,
    Occupied,
    Unknown,
}

impl Cell {
    /// Unknown space stops rays, same as occupied space.
    pub fn blocks(self) -> bool {
        !matches!(self, Cell::Free)
    }

    pub fn to_char(self) -> char {
        match self {
            Cell::Free => '.',
            Cell::Occupied => '#',
            Cell::Unknown => '?',
        }
    }

    pub fn from_char(c: char) -> Option<Cell> {
        match c {
            '.' => Some(Cell::Free),
            '#' => Some(Cell::Occupied),
            '?' => Some(Cell::Unknown),
            _ => None,
        }
    }
}

/// Where a ray first entered a blocking cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub range: f64,
    pub cell: (usize, usize),
}

/// 2-D grid of free/occupied/unknown cells, row-major with row 0 at the
/// lowest `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    resolution: f64,
    origin: (f64, f64),
    width: usize,
    height: usize,
    cells: Vec<Cell>,
}

impl OccupancyGrid {
    /// All-free grid.
    pub fn new(width: usize, height: usize, resolution: f64, origin: (f64, f64)) -> Result<Self> {
        Self::from_cells(width, height, resolution, origin, vec![Cell::Free; width * height])
    }

    pub fn from_cells(
        width: usize,
        height: usize,
        resolution: f64,
        origin: (f64, f64),
        cells: Vec<Cell>,
    ) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(invalid("resolution", format!("must be > 0, got {resolution}")));
        }
        if width == 0 || height == 0 {
            return Err(invalid("width/height", "grid needs at least one cell"));
        }
        if cells.len() != width * height {
            return Err(Error::MapMismatch(format!(
                "{} cells for a {width}x{height} grid",
                cells.len()
            )));
        }
        Ok(Self {
            resolution,
            origin,
            width,
            height,
            cells,
        })
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Footprint in meters.
    pub fn extent(&self) -> (f64, f64) {
        (
            self.width as f64 * self.resolution,
            self.height as f64 * self.resolution,
        )
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell(&self, ix: usize, iy: usize) -> Cell {
        self.cells[iy * self.width + ix]
    }

    pub fn set(&mut self, ix: usize, iy: usize, cell: Cell) {
        self.cells[iy * self.width + ix] = cell;
    }

    /// Marks every cell whose center falls inside the axis-aligned box.
    pub fn fill_rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, cell: Cell) {
        for iy in 0..self.height {
            for ix in 0..self.width {
                let (cx, cy) = self.cell_center(ix, iy);
                if cx > x0 && cx < x1 && cy > y0 && cy < y1 {
                    self.set(ix, iy, cell);
                }
            }
        }
    }

    fn to_grid_units(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.origin.0) / self.resolution,
            (y - self.origin.1) / self.resolution,
        )
    }

    pub fn world_to_cell(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let (gx, gy) = self.to_grid_units(x, y);
        self.grid_units_to_cell(gx, gy)
    }

    fn grid_units_to_cell(&self, gx: f64, gy: f64) -> Option<(usize, usize)> {
        let (fx, fy) = (gx.floor(), gy.floor());
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.origin.0 + (ix as f64 + 0.5) * self.resolution,
            self.origin.1 + (iy as f64 + 0.5) * self.resolution,
        )
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.world_to_cell(x, y).is_some()
    }

    pub fn is_free_at(&self, x: f64, y: f64) -> bool {
        self.world_to_cell(x, y)
            .is_some_and(|(ix, iy)| self.cell(ix, iy) == Cell::Free)
    }

    /// Free cells in row-major order.
    pub fn free_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.height)
            .flat_map(move |iy| (0..self.width).map(move |ix| (ix, iy)))
            .filter(|&(ix, iy)| self.cell(ix, iy) == Cell::Free)
    }

    pub fn free_count(&self) -> usize {
        self.cells.iter().filter(|c| **c == Cell::Free).count()
    }

    fn in_bounds(&self, ix: i64, iy: i64) -> bool {
        ix >= 0 && iy >= 0 && (ix as usize) < self.width && (iy as usize) < self.height
    }

    fn blocks_at(&self, ix: i64, iy: i64) -> bool {
        self.cells[iy as usize * self.width + ix as usize].blocks()
    }

    /// One cell-boundary crossing from grid point `(gx, gy)` inside cell
    /// `(ix, iy)` along unit direction `(c, s)`. Returns the parametric
    /// distance (in cells) to the crossing and the entered cell.
    fn next_crossing(gx: f64, gy: f64, ix: i64, iy: i64, c: f64, s: f64) -> (f64, i64, i64) {
        let tx = if c > 0.0 {
            (ix as f64 + 1.0 - gx) / c
        } else if c < 0.0 {
            (gx - ix as f64) / -c
        } else {
            f64::INFINITY
        };
        let ty = if s > 0.0 {
            (iy as f64 + 1.0 - gy) / s
        } else if s < 0.0 {
            (gy - iy as f64) / -s
        } else {
            f64::INFINITY
        };
        if tx < ty {
            (tx.max(0.0), ix + c.signum() as i64, iy)
        } else {
            (ty.max(0.0), ix, iy + s.signum() as i64)
        }
    }

    /// Cell march from the start cell; `t` values are in cells.
    fn march_cells(
        &self,
        gx: f64,
        gy: f64,
        start: (i64, i64),
        c: f64,
        s: f64,
        t_limit: f64,
    ) -> Option<(f64, i64, i64)> {
        let (mut ix, mut iy) = start;
        let step_x = c.signum() as i64;
        let step_y = s.signum() as i64;
        let dt_x = if c != 0.0 { 1.0 / c.abs() } else { f64::INFINITY };
        let dt_y = if s != 0.0 { 1.0 / s.abs() } else { f64::INFINITY };
        let (mut t_x, mut t_y) = {
            let (t, _, _) = Self::next_crossing(gx, gy, ix, iy, c, 0.0);
            let tx = if c != 0.0 { t } else { f64::INFINITY };
            let (t, _, _) = Self::next_crossing(gx, gy, ix, iy, 0.0, s);
            let ty = if s != 0.0 { t } else { f64::INFINITY };
            (tx, ty)
        };
        loop {
            let t = if t_x < t_y {
                ix += step_x;
                let t = t_x;
                t_x += dt_x;
                t
            } else {
                iy += step_y;
                let t = t_y;
                t_y += dt_y;
                t
            };
            if t >= t_limit || !self.in_bounds(ix, iy) {
                return None;
            }
            if self.blocks_at(ix, iy) {
                return Some((t, ix, iy));
            }
        }
    }

    fn start_cell(&self, x: f64, y: f64) -> Result<(f64, f64, usize, usize)> {
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::OutsideGrid { x, y });
        }
        let (gx, gy) = self.to_grid_units(x, y);
        let (ix, iy) = self
            .grid_units_to_cell(gx, gy)
            .ok_or(Error::OutsideGrid { x, y })?;
        Ok((gx, gy, ix, iy))
    }
}

/// Range casting against an occupancy grid.
pub trait RangeCaster: Sync {
    fn grid(&self) -> &OccupancyGrid;

    /// First blocking cell along the ray within `max_range`, if any. A ray
    /// starting inside a blocking cell hits it at range 0.
    fn cast_hit(&self, origin: (f64, f64), bearing: f64, max_range: f64) -> Result<Option<RayHit>>;

    /// Range to the first blocking cell, or `max_range` when nothing is hit.
    fn cast(&self, origin: (f64, f64), bearing: f64, max_range: f64) -> Result<f64> {
        Ok(self
            .cast_hit(origin, bearing, max_range)?
            .map_or(max_range, |h| h.range.min(max_range)))
    }
}

impl RangeCaster for OccupancyGrid {
    fn grid(&self) -> &OccupancyGrid {
        self
    }

    fn cast_hit(&self, origin: (f64, f64), bearing: f64, max_range: f64) -> Result<Option<RayHit>> {
        let (gx, gy, ix, iy) = self.start_cell(origin.0, origin.1)?;
        if self.cell(ix, iy).blocks() {
            return Ok(Some(RayHit {
                range: 0.0,
                cell: (ix, iy),
            }));
        }
        let (s, c) = bearing.sin_cos();
        let limit = max_range / self.resolution;
        Ok(self
            .march_cells(gx, gy, (ix as i64, iy as i64), c, s, limit)
            .map(|(t, hx, hy)| RayHit {
                range: t * self.resolution,
                cell: (hx as usize, hy as usize),
            }))
    }
}

/// Range to the first blocking cell along `bearing` from `origin`, using the
/// cell-march backend.
pub fn ray_cast(grid: &OccupancyGrid, origin: (f64, f64), bearing: f64, max_range: f64) -> Result<f64> {
    grid.cast(origin, bearing, max_range)
}

/// Distance-transform accelerated caster.
///
/// Each free cell stores the Euclidean distance (cells, center to center) to
/// the nearest blocking cell. From any point in a cell with clearance `d`, the
/// ray can advance `d - sqrt(2)` cells without touching a blocking cell.
#[derive(Debug, Clone)]
pub struct DistanceField {
    grid: OccupancyGrid,
    clearance: Vec<f32>,
}

impl DistanceField {
    pub fn new(grid: &OccupancyGrid) -> Self {
        let (w, h) = (grid.width, grid.height);
        let inf = 1e20_f64;
        let mut sq: Vec<f64> = grid
            .cells
            .iter()
            .map(|c| if c.blocks() { 0.0 } else { inf })
            .collect();
        let mut buf = vec![0.0; w.max(h)];
        let mut out = vec![0.0; w.max(h)];
        for ix in 0..w {
            for iy in 0..h {
                buf[iy] = sq[iy * w + ix];
            }
            edt_1d(&buf[..h], &mut out[..h]);
            for iy in 0..h {
                sq[iy * w + ix] = out[iy];
            }
        }
        for iy in 0..h {
            buf[..w].copy_from_slice(&sq[iy * w..(iy + 1) * w]);
            edt_1d(&buf[..w], &mut out[..w]);
            sq[iy * w..(iy + 1) * w].copy_from_slice(&out[..w]);
        }
        let clearance = sq
            .iter()
            .map(|&d| if d >= inf { f32::INFINITY } else { d.sqrt() as f32 })
            .collect();
        Self {
            grid: grid.clone(),
            clearance,
        }
    }

    /// Clearance of a cell in cells (0 for blocking cells).
    pub fn clearance(&self, ix: usize, iy: usize) -> f64 {
        self.clearance[iy * self.grid.width + ix] as f64
    }
}

/// 1-D squared Euclidean distance transform of a sampled function
/// (Felzenszwalb and Huttenlocher lower envelope of parabolas).
fn edt_1d(f: &[f64], d: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let intersect = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s = intersect(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = intersect(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        *out = dq * dq + f[v[k]];
    }
}

impl RangeCaster for DistanceField {
    fn grid(&self) -> &OccupancyGrid {
        &self.grid
    }

    fn cast_hit(&self, origin: (f64, f64), bearing: f64, max_range: f64) -> Result<Option<RayHit>> {
        let g = &self.grid;
        let (gx0, gy0, sx, sy) = g.start_cell(origin.0, origin.1)?;
        if g.cell(sx, sy).blocks() {
            return Ok(Some(RayHit {
                range: 0.0,
                cell: (sx, sy),
            }));
        }
        let (s, c) = bearing.sin_cos();
        let limit = max_range / g.resolution;
        let (mut ix, mut iy) = (sx as i64, sy as i64);
        let mut t = 0.0;
        loop {
            let safe = self.clearance[iy as usize * g.width + ix as usize] as f64 - SQRT_2;
            if safe.is_infinite() {
                return Ok(None);
            }
            if safe > 1.0 {
                t += safe;
                if t >= limit {
                    return Ok(None);
                }
                match g.grid_units_to_cell(gx0 + c * t, gy0 + s * t) {
                    Some((nx, ny)) => {
                        ix = nx as i64;
                        iy = ny as i64;
                    }
                    None => return Ok(None),
                }
                continue;
            }
            let (dt, nx, ny) = OccupancyGrid::next_crossing(gx0 + c * t, gy0 + s * t, ix, iy, c, s);
            t += dt;
            ix = nx;
            iy = ny;
            if t >= limit || !g.in_bounds(ix, iy) {
                return Ok(None);
            }
            if g.blocks_at(ix, iy) {
                return Ok(Some(RayHit {
                    range: t * g.resolution,
                    cell: (ix as usize, iy as usize),
                }));
            }
        }
    }
}
