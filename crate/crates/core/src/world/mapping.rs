//! Mapping-phase helpers: projecting detections into the map frame and
//! pulling them onto the shelf surface they belong to.

use super::{CameraModel, OccupancyGrid, SemanticVoxelGrid};
use crate::error::{Error, Result};

/// Default cap on pull/push steps, in cells.
pub const DEFAULT_SNAP_STEPS: usize = 10;

/// Integer Bresenham line from `a` to `b`, both endpoints included.
pub fn bresenham(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx - dy) as usize + 1);
    loop {
        out.push((x, y));
        if (x, y) == b {
            return out;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Result of a pull/push refinement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snap {
    pub point: (f64, f64),
    pub snapped: bool,
}

/// Moves `point` along the camera ray onto the first occupied cell found
/// within `max_steps` cells, searching past the point first and then back
/// toward the camera. Returns the cell center, or the unchanged point when
/// nothing is found.
pub fn snap_to_occupied(
    grid: &OccupancyGrid,
    camera_xy: (f64, f64),
    point_xy: (f64, f64),
    max_steps: usize,
) -> Result<Snap> {
    let cam = grid
        .world_to_cell(camera_xy.0, camera_xy.1)
        .ok_or(Error::OutsideGrid {
            x: camera_xy.0,
            y: camera_xy.1,
        })?;
    let pt = grid
        .world_to_cell(point_xy.0, point_xy.1)
        .ok_or(Error::OutsideGrid {
            x: point_xy.0,
            y: point_xy.1,
        })?;
    let occupied = |c: (i64, i64)| {
        c.0 >= 0
            && c.1 >= 0
            && (c.0 as usize) < grid.width()
            && (c.1 as usize) < grid.height()
            && grid.cell(c.0 as usize, c.1 as usize) == super::Cell::Occupied
    };
    let in_bounds = |c: (i64, i64)| {
        c.0 >= 0 && c.1 >= 0 && (c.0 as usize) < grid.width() && (c.1 as usize) < grid.height()
    };
    let hit = |c: (i64, i64)| {
        let (x, y) = grid.cell_center(c.0 as usize, c.1 as usize);
        Snap {
            point: (x, y),
            snapped: true,
        }
    };

    let cam = (cam.0 as i64, cam.1 as i64);
    let pt = (pt.0 as i64, pt.1 as i64);
    if occupied(pt) {
        return Ok(hit(pt));
    }
    let unchanged = Snap {
        point: point_xy,
        snapped: false,
    };
    let (dx, dy) = (pt.0 - cam.0, pt.1 - cam.1);
    let major = dx.abs().max(dy.abs());
    if major == 0 {
        return Ok(unchanged);
    }

    // Extend the camera->point line by an integer multiple so that it passes
    // exactly through the point cell and reaches at least max_steps beyond.
    let k = 1 + (max_steps as i64 + major - 1) / major;
    let line = bresenham(cam, (cam.0 + k * dx, cam.1 + k * dy));
    let idx = line
        .iter()
        .position(|&c| c == pt)
        .expect("extended line passes through the point cell");

    for &c in line.iter().skip(idx + 1).take(max_steps) {
        if !in_bounds(c) {
            break;
        }
        if occupied(c) {
            return Ok(hit(c));
        }
    }
    for &c in line[..idx].iter().rev().take(max_steps) {
        if occupied(c) {
            return Ok(hit(c));
        }
    }
    Ok(unchanged)
}

/// Projects one classified detection (pixel + median depth) into the map,
/// snaps it onto the nearest shelf along the camera ray and records it.
/// Returns whether the snap found an occupied cell.
#[allow(clippy::too_many_arguments)]
pub fn project_detection(
    occ: &OccupancyGrid,
    sem: &mut SemanticVoxelGrid,
    cam: &CameraModel,
    u: f64,
    v: f64,
    depth: f64,
    class: usize,
    max_steps: usize,
) -> Result<bool> {
    let p = cam.pixel_to_world(u, v, depth)?;
    let camera_xy = (cam.translation[0], cam.translation[1]);
    let snap = snap_to_occupied(occ, camera_xy, (p[0], p[1]), max_steps)?;
    sem.insert_detection([snap.point.0, snap.point.1, p[2]], class)?;
    Ok(snap.snapped)
}
