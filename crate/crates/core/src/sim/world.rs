//! Procedural aisle worlds.
//!
//! Shelf rows run along x. `n_aisles + 1` rows separate `n_aisles` aisles;
//! the outer rows stand against the boundary walls and only face inward.
//! Each row is split into `shelves_per_aisle` segments with cross aisles
//! between them and at both ends. The layout is symmetric under a half turn
//! about the world center, so geometry alone cannot tell the aisles apart.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::world::{Cell, OccupancyGrid, Pose, SemanticVoxelGrid, VoxelKey};

/// How shelf faces are stocked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "faces")]
pub enum StockingPlan {
    /// Each aisle draws from its own disjoint block of classes, and every
    /// face within an aisle has a different dominant class.
    AisleDistinct,
    /// Every aisle is stocked identically.
    Identical,
    /// Each face gets three classes drawn at random from the taxonomy.
    Random,
    /// Explicit class mix per face, in face order; cycles when shorter.
    Explicit(Vec<Vec<usize>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    pub n_aisles: usize,
    pub shelves_per_aisle: usize,
    pub aisle_width: f64,
    pub shelf_length: f64,
    pub shelf_depth: f64,
    /// Width of the cross aisles between segments.
    pub gap: f64,
    /// Width of the cross aisles at both ends.
    pub end_margin: f64,
    pub wall: f64,
    pub resolution: f64,
    pub semantic_resolution: f64,
    pub z_resolution: f64,
    pub height: f64,
    /// Items are placed on the layers below this height.
    pub stock_height: f64,
    pub num_classes: usize,
    pub items_per_face: usize,
    pub plan: StockingPlan,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self::two_aisle_aliased()
    }
}

impl WorldSpec {
    /// Two geometrically identical aisles with disjoint stock: the aliasing
    /// fixture. About 7.4 m x 4.0 m.
    pub fn two_aisle_aliased() -> Self {
        Self {
            n_aisles: 2,
            shelves_per_aisle: 2,
            aisle_width: 1.2,
            shelf_length: 2.0,
            shelf_depth: 0.4,
            gap: 0.6,
            end_margin: 1.2,
            wall: 0.2,
            resolution: 0.1,
            semantic_resolution: 0.2,
            z_resolution: 0.3,
            height: 2.4,
            stock_height: 1.8,
            num_classes: 14,
            items_per_face: 12,
            plan: StockingPlan::AisleDistinct,
            seed: 7,
        }
    }

    /// Three aisles of three shelf segments, 14 classes, 144 products.
    pub fn mock_store() -> Self {
        Self {
            n_aisles: 3,
            shelves_per_aisle: 3,
            shelf_length: 1.6,
            items_per_face: 8,
            plan: StockingPlan::Random,
            ..Self::two_aisle_aliased()
        }
    }

    /// A 30 m x 15 m store.
    pub fn large_store() -> Self {
        Self {
            n_aisles: 5,
            shelves_per_aisle: 5,
            aisle_width: 2.2,
            shelf_length: 4.4,
            shelf_depth: 0.6,
            gap: 1.2,
            end_margin: 1.4,
            items_per_face: 24,
            plan: StockingPlan::Random,
            ..Self::two_aisle_aliased()
        }
    }

    pub fn extent(&self) -> (f64, f64) {
        let s = self.shelves_per_aisle as f64;
        let w = 2.0 * self.wall + 2.0 * self.end_margin + s * self.shelf_length + (s - 1.0) * self.gap;
        let n = self.n_aisles as f64;
        let h = 2.0 * self.wall + (n + 1.0) * self.shelf_depth + n * self.aisle_width;
        (w, h)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_aisles == 0 || self.shelves_per_aisle == 0 {
            return Err(invalid("world", "need at least one aisle and one shelf"));
        }
        if self.num_classes == 0 {
            return Err(invalid("num_classes", "must be >= 1"));
        }
        let lengths = [
            ("aisle_width", self.aisle_width),
            ("shelf_length", self.shelf_length),
            ("shelf_depth", self.shelf_depth),
            ("wall", self.wall),
            ("end_margin", self.end_margin),
        ];
        for (name, v) in lengths {
            if !(v > 0.0) {
                return Err(invalid(name, "must be > 0"));
            }
        }
        if !(self.gap >= 0.0) {
            return Err(invalid("gap", "must be >= 0"));
        }
        if !(self.resolution > 0.0 && self.semantic_resolution >= self.resolution) {
            return Err(invalid("resolution", "need 0 < resolution <= semantic_resolution"));
        }
        // every boundary must fall on the semantic lattice so that a face
        // column lies wholly inside its shelf
        let q = self.semantic_resolution;
        for (name, v) in lengths.iter().chain([("gap", self.gap)].iter()) {
            let k = v / q;
            if (k - k.round()).abs() > 1e-6 {
                return Err(invalid(name, format!("must be a multiple of the semantic resolution {q}")));
            }
        }
        if !(self.stock_height > 0.0 && self.stock_height <= self.height) {
            return Err(invalid("stock_height", "must lie in (0, height]"));
        }
        let (w, h) = self.extent();
        if w / self.resolution > 100_000.0 || h / self.resolution > 100_000.0 {
            return Err(invalid("world", "extent overflows the grid"));
        }
        if let StockingPlan::Explicit(faces) = &self.plan {
            if faces.is_empty() || faces.iter().any(|f| f.is_empty()) {
                return Err(invalid("plan", "every face needs at least one class"));
            }
            if let Some(&c) = faces.iter().flatten().find(|&&c| c >= self.num_classes) {
                return Err(Error::InvalidClass {
                    class: c,
                    num_classes: self.num_classes,
                });
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout { spec: self.clone() }
    }
}

/// Which side of a row a face looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    /// Toward lower y.
    South,
    /// Toward higher y.
    North,
}

/// One stocked shelf face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face {
    pub row: usize,
    pub segment: usize,
    pub side: Side,
    /// The aisle this face looks into.
    pub aisle: usize,
    /// Index among the faces of its aisle.
    pub index_in_aisle: usize,
}

/// Derived coordinates of a world layout.
#[derive(Debug, Clone)]
pub struct Layout {
    spec: WorldSpec,
}

impl Layout {
    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    /// Lower y of shelf row `r`.
    pub fn row_y(&self, r: usize) -> f64 {
        let s = &self.spec;
        s.wall + r as f64 * (s.shelf_depth + s.aisle_width)
    }

    /// Center line of aisle `a`.
    pub fn aisle_y(&self, a: usize) -> f64 {
        self.row_y(a) + self.spec.shelf_depth + self.spec.aisle_width / 2.0
    }

    /// Lower x of shelf segment `j`.
    pub fn segment_x(&self, j: usize) -> f64 {
        let s = &self.spec;
        s.wall + s.end_margin + j as f64 * (s.shelf_length + s.gap)
    }

    /// Center x of cross aisle `k`: 0 is the west end, `shelves_per_aisle`
    /// the east end, the others the gaps between segments.
    pub fn cross_x(&self, k: usize) -> f64 {
        let s = &self.spec;
        let n = s.shelves_per_aisle;
        if k == 0 {
            s.wall + s.end_margin / 2.0
        } else if k >= n {
            self.segment_x(n - 1) + s.shelf_length + s.end_margin / 2.0
        } else {
            self.segment_x(k) - s.gap / 2.0
        }
    }

    /// All faces, row by row, segment by segment, south side first.
    pub fn faces(&self) -> Vec<Face> {
        let s = &self.spec;
        let mut per_aisle = vec![0usize; s.n_aisles];
        let mut out = Vec::new();
        for row in 0..=s.n_aisles {
            for segment in 0..s.shelves_per_aisle {
                for side in [Side::South, Side::North] {
                    let aisle = match side {
                        Side::South if row > 0 => row - 1,
                        Side::North if row < s.n_aisles => row,
                        _ => continue,
                    };
                    out.push(Face {
                        row,
                        segment,
                        side,
                        aisle,
                        index_in_aisle: 0,
                    });
                }
            }
        }
        // number faces within each aisle in a fixed order
        for f in &mut out {
            f.index_in_aisle = per_aisle[f.aisle];
            per_aisle[f.aisle] += 1;
        }
        out
    }

    /// Class mix of every face, in face order.
    pub fn face_mixes(&self) -> Vec<Vec<usize>> {
        let s = &self.spec;
        let faces = self.faces();
        let c = s.num_classes;
        match &s.plan {
            StockingPlan::AisleDistinct => {
                let block = (c / s.n_aisles).max(1);
                faces
                    .iter()
                    .map(|f| {
                        let base = (f.aisle * block) % c;
                        let p = base + f.index_in_aisle % block;
                        let q = base + (f.index_in_aisle + block / 2) % block;
                        vec![p, p, p, q]
                    })
                    .collect()
            }
            StockingPlan::Identical => {
                let per = faces.iter().filter(|f| f.aisle == 0).count().max(1);
                faces
                    .iter()
                    .map(|f| {
                        let p = f.index_in_aisle % c;
                        vec![p, p, p, (p + per) % c]
                    })
                    .collect()
            }
            StockingPlan::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(s.seed ^ 0x5eed_f00d);
                faces
                    .iter()
                    .map(|_| (0..3).map(|_| rng.random_range(0..c)).collect())
                    .collect()
            }
            StockingPlan::Explicit(mixes) => (0..faces.len()).map(|i| mixes[i % mixes.len()].clone()).collect(),
        }
    }

    /// Free positions along an aisle center line, from the west cross aisle
    /// to the east one.
    pub fn aisle_span(&self) -> (f64, f64) {
        (self.cross_x(0), self.cross_x(self.spec.shelves_per_aisle))
    }

    /// A tour that starts `start_frac` of the way along `start_aisle`,
    /// walks to the end it faces, crosses to the neighboring aisle, walks
    /// back, and so on for `legs` aisle traversals.
    pub fn aisle_tour(&self, start_aisle: usize, start_frac: f64, eastward: bool, legs: usize) -> Vec<Pose> {
        let (x0, x1) = self.aisle_span();
        let n = self.spec.n_aisles;
        let mut aisle = start_aisle.min(n - 1);
        let mut east = eastward;
        let mut up = aisle + 1 < n;
        let x = x0 + start_frac.clamp(0.0, 1.0) * (x1 - x0);
        let mut pts = vec![(x, self.aisle_y(aisle))];
        for leg in 0..legs {
            let end = if east { x1 } else { x0 };
            pts.push((end, self.aisle_y(aisle)));
            if leg + 1 < legs && n > 1 {
                if (up && aisle + 1 >= n) || (!up && aisle == 0) {
                    up = !up;
                }
                aisle = if up { aisle + 1 } else { aisle - 1 };
                pts.push((end, self.aisle_y(aisle)));
                east = !east;
            }
        }
        pts.into_iter().map(|(x, y)| Pose::new(x, y, 0.0)).collect()
    }
}

/// Occupancy and semantic layers of a world.
pub fn build_world(spec: &WorldSpec) -> Result<(OccupancyGrid, SemanticVoxelGrid)> {
    spec.validate()?;
    let (w, h) = spec.extent();
    let nx = (w / spec.resolution).round() as usize;
    let ny = (h / spec.resolution).round() as usize;
    let mut occ = OccupancyGrid::new(nx, ny, spec.resolution, (0.0, 0.0))?;
    let t = spec.wall;
    occ.fill_rect(0.0, 0.0, w, t, Cell::Occupied);
    occ.fill_rect(0.0, h - t, w, h, Cell::Occupied);
    occ.fill_rect(0.0, 0.0, t, h, Cell::Occupied);
    occ.fill_rect(w - t, 0.0, w, h, Cell::Occupied);
    let layout = spec.layout();
    for row in 0..=spec.n_aisles {
        let y0 = layout.row_y(row);
        for seg in 0..spec.shelves_per_aisle {
            let x0 = layout.segment_x(seg);
            occ.fill_rect(x0, y0, x0 + spec.shelf_length, y0 + spec.shelf_depth, Cell::Occupied);
        }
    }

    let mut sem = SemanticVoxelGrid::for_grid(&occ, spec.semantic_resolution, spec.z_resolution, spec.height, spec.num_classes)?;
    let q = spec.semantic_resolution;
    let n_cols = (spec.shelf_length / q).round() as usize;
    let n_layers = ((spec.stock_height / spec.z_resolution).round() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for (face, mix) in layout.faces().iter().zip(layout.face_mixes()) {
        let y0 = layout.row_y(face.row);
        let yc = match face.side {
            Side::South => y0 + q / 2.0,
            Side::North => y0 + spec.shelf_depth - q / 2.0,
        };
        let x0 = layout.segment_x(face.segment);
        for _ in 0..spec.items_per_face {
            let col = rng.random_range(0..n_cols);
            let layer = rng.random_range(0..n_layers);
            let class = mix[rng.random_range(0..mix.len())];
            let point = [x0 + (col as f64 + 0.5) * q, yc, (layer as f64 + 0.5) * spec.z_resolution];
            sem.insert_detection(point, class)?;
        }
    }
    Ok((occ, sem))
}

/// Removes `⌊remove_fraction·total⌋` unit counts chosen uniformly at random,
/// then moves `⌊shuffle_fraction·total⌋` of the remaining units to other
/// stocked voxels.
pub fn perturb_world(sem: &SemanticVoxelGrid, remove_fraction: f64, shuffle_fraction: f64, seed: u64) -> Result<SemanticVoxelGrid> {
    if !(0.0..=1.0).contains(&remove_fraction) || !(0.0..=1.0).contains(&shuffle_fraction) {
        return Err(invalid("perturbation fractions", "must lie in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shelf_voxels: Vec<VoxelKey> = sem.voxels().map(|(k, _)| k).collect();
    let units = |g: &SemanticVoxelGrid| -> Vec<(VoxelKey, usize)> {
        g.voxels()
            .flat_map(|(k, h)| {
                h.iter()
                    .enumerate()
                    .flat_map(move |(c, &n)| std::iter::repeat_n((k, c), n as usize))
            })
            .collect()
    };
    let mut out = sem.clone();
    let all = units(&out);
    let total = all.len();
    let n_remove = (remove_fraction * total as f64).floor() as usize;
    for i in sample(&mut rng, total, n_remove).into_vec() {
        let (k, c) = all[i];
        out.remove_one(k, c);
    }
    let left = units(&out);
    let n_move = ((shuffle_fraction * total as f64).floor() as usize).min(left.len());
    if shelf_voxels.len() > 1 {
        for i in sample(&mut rng, left.len(), n_move).into_vec() {
            let (k, c) = left[i];
            let mut dest = shelf_voxels[rng.random_range(0..shelf_voxels.len())];
            while dest == k {
                dest = shelf_voxels[rng.random_range(0..shelf_voxels.len())];
            }
            out.remove_one(k, c);
            out.add_count(dest, c, 1)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aliased_world_dimensions() {
        let spec = WorldSpec::two_aisle_aliased();
        let (w, h) = spec.extent();
        assert!((w - 7.4).abs() < 1e-9 && (h - 4.0).abs() < 1e-9);
        let (occ, sem) = build_world(&spec).unwrap();
        assert_eq!((occ.width(), occ.height()), (74, 40));
        assert!(sem.covers(&occ));
        let faces = spec.layout().faces();
        assert_eq!(faces.len(), 8);
        assert_eq!(sem.total_count(), 8 * 12);
    }

    #[test]
    fn geometry_is_half_turn_symmetric() {
        for spec in [WorldSpec::two_aisle_aliased(), WorldSpec::mock_store()] {
            let (occ, _) = build_world(&spec).unwrap();
            let (w, h) = (occ.width(), occ.height());
            for iy in 0..h {
                for ix in 0..w {
                    assert_eq!(occ.cell(ix, iy), occ.cell(w - 1 - ix, h - 1 - iy), "({ix}, {iy})");
                }
            }
        }
    }

    #[test]
    fn aisles_carry_disjoint_classes() {
        let spec = WorldSpec::two_aisle_aliased();
        let layout = spec.layout();
        let mixes = layout.face_mixes();
        let mut per_aisle = [std::collections::BTreeSet::new(), std::collections::BTreeSet::new()];
        for (f, m) in layout.faces().iter().zip(&mixes) {
            per_aisle[f.aisle].extend(m.iter().copied());
        }
        assert!(per_aisle[0].is_disjoint(&per_aisle[1]));
        let (_, sem) = build_world(&spec).unwrap();
        // each stocked voxel sits in a column of an occupied shelf
        let (occ, _) = build_world(&spec).unwrap();
        for (k, _) in sem.voxels() {
            let c = sem.voxel_center(k);
            assert!(!occ.is_free_at(c[0], c[1]));
        }
    }

    #[test]
    fn identical_stock_is_symmetric_in_counts() {
        let spec = WorldSpec {
            plan: StockingPlan::Identical,
            ..WorldSpec::two_aisle_aliased()
        };
        let layout = spec.layout();
        let mixes = layout.face_mixes();
        let faces = layout.faces();
        let a0: Vec<_> = faces.iter().zip(&mixes).filter(|(f, _)| f.aisle == 0).map(|(_, m)| m.clone()).collect();
        let a1: Vec<_> = faces.iter().zip(&mixes).filter(|(f, _)| f.aisle == 1).map(|(_, m)| m.clone()).collect();
        assert_eq!(a0, a1);
    }

    #[test]
    fn large_store_size() {
        let (w, h) = WorldSpec::large_store().extent();
        assert!((w - 30.0).abs() < 1e-9 && (h - 15.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_specs() {
        let bad = WorldSpec {
            aisle_width: 1.3,
            ..WorldSpec::two_aisle_aliased()
        };
        assert!(build_world(&bad).is_err());
        let bad = WorldSpec {
            plan: StockingPlan::Explicit(vec![vec![20]]),
            ..WorldSpec::two_aisle_aliased()
        };
        assert!(matches!(build_world(&bad), Err(Error::InvalidClass { .. })));
    }

    #[test]
    fn perturbation_counts() {
        let spec = WorldSpec {
            items_per_face: 25,
            ..WorldSpec::two_aisle_aliased()
        };
        let (_, sem) = build_world(&spec).unwrap();
        assert_eq!(sem.total_count(), 200);
        assert_eq!(perturb_world(&sem, 0.0, 0.0, 1).unwrap(), sem);
        assert_eq!(perturb_world(&sem, 0.5, 0.0, 1).unwrap().total_count(), 100);
        let a = perturb_world(&sem, 0.25, 0.2, 3).unwrap();
        assert_eq!(a, perturb_world(&sem, 0.25, 0.2, 3).unwrap());
        assert_eq!(a.total_count(), 150);
        let moved = perturb_world(&sem, 0.0, 0.2, 4).unwrap();
        assert_eq!(moved.total_count(), 200);
        assert_ne!(moved, sem);
        assert_eq!(moved.class_totals(), sem.class_totals());
        assert!(perturb_world(&sem, 1.5, 0.0, 1).is_err());
    }

    #[test]
    fn tours_stay_in_free_space() {
        let spec = WorldSpec::two_aisle_aliased();
        let (occ, _) = build_world(&spec).unwrap();
        let layout = spec.layout();
        for (a, f, e) in [(0, 0.2, true), (1, 0.7, false), (0, 0.5, false)] {
            let tour = layout.aisle_tour(a, f, e, 2);
            assert!(tour.len() >= 4);
            for p in &tour {
                assert!(occ.is_free_at(p.x, p.y), "{p:?}");
            }
        }
    }
}
