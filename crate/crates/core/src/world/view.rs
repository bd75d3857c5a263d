//! Expected semantic observation from a pose, by casting rays through the
//! occupancy grid and reading the semantic column behind each hit.

use super::{CameraModel, Pose, RangeCaster, SemanticVoxelGrid};
use crate::error::{invalid, Result};
use crate::semantic::{ClassStat, SemanticVector};

/// Relative bearings of `n` rays splitting `fov` into equal bins, one ray
/// through the center of each bin, in increasing order.
pub fn fov_bearings(fov: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| -fov / 2.0 + fov * (i as f64 + 0.5) / n as f64)
        .collect()
}

/// A semantic column hit by at least one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibleColumn<'a> {
    pub column: (u32, u32),
    /// Mean hit range over the rays that reached this column.
    pub range: f64,
    /// Mean relative bearing of those rays.
    pub bearing: f64,
    pub counts: &'a [u32],
}

/// (column, histogram, rays, range sum, bearing sum)
type Accum<'a> = ((u32, u32), &'a [u32], u32, f64, f64);

/// Stocked columns seen from `pose`, in the order the sweep first reaches
/// them. Each column is reported once no matter how many rays hit it.
pub fn visible_columns<'a, R: RangeCaster + ?Sized>(
    caster: &R,
    sem: &'a SemanticVoxelGrid,
    pose: &Pose,
    fov: f64,
    max_range: f64,
    n_rays: usize,
) -> Result<Vec<VisibleColumn<'a>>> {
    if n_rays == 0 {
        return Err(invalid("n_rays", "must be >= 1"));
    }
    let grid = caster.grid();
    let mut acc: Vec<Accum<'a>> = Vec::new();
    for rel in fov_bearings(fov, n_rays) {
        let Some(hit) = caster.cast_hit(pose.position(), pose.theta + rel, max_range)? else {
            continue;
        };
        let (cx, cy) = grid.cell_center(hit.cell.0, hit.cell.1);
        let Some(col) = sem.column_of(cx, cy) else {
            continue;
        };
        let Some(hist) = sem.column_histogram(col.0, col.1) else {
            continue;
        };
        match acc.iter_mut().find(|e| e.0 == col) {
            Some(e) => {
                e.2 += 1;
                e.3 += hit.range;
                e.4 += rel;
            }
            None => acc.push((col, hist, 1, hit.range, rel)),
        }
    }
    Ok(acc
        .into_iter()
        .map(|(column, counts, n, r, b)| VisibleColumn {
            column,
            range: r / n as f64,
            bearing: b / n as f64,
            counts,
        })
        .collect())
}

/// Semantic vector a camera at `pose` is expected to observe: item counts of
/// every visible column (all z layers), with count-weighted mean range and
/// bearing per class.
pub fn expected_semantic_view<R: RangeCaster + ?Sized>(
    caster: &R,
    sem: &SemanticVoxelGrid,
    pose: &Pose,
    cam: &CameraModel,
    n_rays: usize,
) -> Result<SemanticVector> {
    let c = sem.num_classes();
    let mut counts = vec![0.0; c];
    let mut range_sum = vec![0.0; c];
    let mut bearing_sum = vec![0.0; c];
    for col in visible_columns(caster, sem, pose, cam.fov, cam.max_range, n_rays)? {
        for (class, &n) in col.counts.iter().enumerate() {
            if n > 0 {
                let n = n as f64;
                counts[class] += n;
                range_sum[class] += n * col.range;
                bearing_sum[class] += n * col.bearing;
            }
        }
    }
    Ok(SemanticVector::from_stats(
        c,
        (0..c).filter(|&k| counts[k] > 0.0).map(|k| ClassStat {
            class: k,
            count: counts[k],
            range: range_sum[k] / counts[k],
            bearing: bearing_sum[k] / counts[k],
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantic::SemanticSignature;
    use crate::world::{Cell, DistanceField, OccupancyGrid};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// 6 m x 4 m room with one 0.2 m shelf column at x in [3.0, 3.2),
    /// y in [2.0, 2.2), holding 4 items of class 2.
    fn shelf_world() -> (OccupancyGrid, SemanticVoxelGrid) {
        let mut occ = OccupancyGrid::new(60, 40, 0.1, (0.0, 0.0)).unwrap();
        occ.fill_rect(3.0, 2.0, 3.2, 2.2, Cell::Occupied);
        let mut sem = SemanticVoxelGrid::for_grid(&occ, 0.2, 0.3, 2.4, 14).unwrap();
        for z in [0.2, 0.5, 0.8, 1.1] {
            sem.insert_detection([3.1, 2.1, z], 2).unwrap();
        }
        (occ, sem)
    }

    /// Brute-force oracle for a single stocked column: which rays of the
    /// sweep land in it, computed by dense point sampling along each ray.
    fn oracle_single_column(pose: &Pose, fov: f64, n: usize, x0: f64, y0: f64, size: f64) -> Option<(f64, f64)> {
        let mut hits = Vec::new();
        for rel in fov_bearings(fov, n) {
            let (s, c) = (pose.theta + rel).sin_cos();
            let mut t = 0.0;
            while t < 5.0 {
                let (x, y) = (pose.x + c * t, pose.y + s * t);
                if x >= x0 && x < x0 + size && y >= y0 && y < y0 + size {
                    hits.push((t, rel));
                    break;
                }
                t += 1e-4;
            }
        }
        if hits.is_empty() {
            return None;
        }
        let n = hits.len() as f64;
        Some((hits.iter().map(|h| h.0).sum::<f64>() / n, hits.iter().map(|h| h.1).sum::<f64>() / n))
    }

    #[test]
    fn empty_semantic_grid() {
        let (occ, _) = shelf_world();
        let sem = SemanticVoxelGrid::for_grid(&occ, 0.2, 0.3, 2.4, 14).unwrap();
        let v = expected_semantic_view(&occ, &sem, &Pose::new(1.0, 2.1, 0.0), &CameraModel::default(), 48).unwrap();
        assert!(v.is_empty());
        assert_eq!(v.counts(), &[0.0; 14]);
    }

    #[test]
    fn single_column_ahead() {
        let (occ, sem) = shelf_world();
        let pose = Pose::new(1.0, 2.1, 0.0);
        let cam = CameraModel::default();
        let v = expected_semantic_view(&occ, &sem, &pose, &cam, 48).unwrap();
        assert_eq!(v.counts()[2], 4.0);
        assert_eq!(v.total_count(), 4.0);
        let (r, b) = oracle_single_column(&pose, cam.fov, 48, 3.0, 2.0, 0.2).unwrap();
        assert!((v.mean_range()[2] - 2.0).abs() <= 0.1);
        assert!((v.mean_range()[2] - r).abs() < 1e-3);
        assert!((v.mean_bearing()[2] - b).abs() < 1e-9);
        assert!(v.mean_bearing()[2].abs() < 0.05);
    }

    #[test]
    fn facing_away_sees_nothing() {
        let (occ, sem) = shelf_world();
        let v = expected_semantic_view(&occ, &sem, &Pose::new(1.0, 2.1, PI), &CameraModel::default(), 48).unwrap();
        assert!(v.is_empty());
    }

    #[test]
    fn backends_give_same_view() {
        let (occ, sem) = shelf_world();
        let df = DistanceField::new(&occ);
        let pose = Pose::new(0.7, 1.3, 0.3);
        let cam = CameraModel::default();
        let a = expected_semantic_view(&occ, &sem, &pose, &cam, 64).unwrap();
        let b = expected_semantic_view(&df, &sem, &pose, &cam, 64).unwrap();
        assert_eq!(a.counts(), b.counts());
        assert!((a.mean_range()[2] - b.mean_range()[2]).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn mask_and_bearing_invariants(x in 0.2f64..5.8, y in 0.2f64..3.8, th in -3.2f64..3.2) {
            let (occ, sem) = shelf_world();
            prop_assume!(occ.is_free_at(x, y));
            let cam = CameraModel::default();
            let v = expected_semantic_view(&occ, &sem, &Pose::new(x, y, th), &cam, 32).unwrap();
            for c in 0..14 {
                prop_assert_eq!(v.mask()[c], v.counts()[c] > 0.0);
                if v.mask()[c] {
                    prop_assert!(v.mean_bearing()[c].abs() <= cam.fov / 2.0 + 1e-9);
                    prop_assert!(v.mean_range()[c] >= 0.0);
                }
            }
        }
    }
}
