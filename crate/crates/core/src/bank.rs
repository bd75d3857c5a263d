//! Precomputed expected semantic views over a quantized pose grid, with a
//! class-to-pose inverse index for fast pose proposals.
//!
//! Views are stored compactly as the list of visible classes of each entry.
//! Entries are kept in ascending key order, and a dense
//! `(ix, iy, itheta) -> entry` table gives O(1) lookups by pose.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::semantic::{ClassStat, SemanticSignature, SemanticVector, SimilarityQuery, SimilarityWeights};
use crate::world::{expected_semantic_view, wrap_angle, CameraModel, OccupancyGrid, Pose, RangeCaster, SemanticVoxelGrid};

/// Quantized pose: planar cell and heading bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 3]", into = "[u32; 3]")]
pub struct PoseKey {
    pub ix: u32,
    pub iy: u32,
    pub itheta: u32,
}

impl From<[u32; 3]> for PoseKey {
    fn from(a: [u32; 3]) -> Self {
        Self {
            ix: a[0],
            iy: a[1],
            itheta: a[2],
        }
    }
}

impl From<PoseKey> for [u32; 3] {
    fn from(k: PoseKey) -> Self {
        [k.ix, k.iy, k.itheta]
    }
}

/// Resolution of the pose grid a bank is built over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseGridSpec {
    pub xy_step: f64,
    pub n_theta: u32,
    /// Rays cast per expected view.
    pub n_rays: usize,
}

impl Default for PoseGridSpec {
    fn default() -> Self {
        Self {
            xy_step: 0.1,
            n_theta: 36,
            n_rays: 48,
        }
    }
}

impl PoseGridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.xy_step > 0.0) {
            return Err(invalid("xy_step", "must be > 0"));
        }
        if self.n_theta == 0 {
            return Err(invalid("n_theta", "must be >= 1"));
        }
        if self.n_rays == 0 {
            return Err(invalid("n_rays", "must be >= 1"));
        }
        Ok(())
    }
}

/// Placement of the pose grid in the map frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseLattice {
    pub xy_step: f64,
    pub n_theta: u32,
    pub n_rays: usize,
    pub origin: [f64; 2],
    pub nx: u32,
    pub ny: u32,
}

impl PoseLattice {
    fn for_grid(occ: &OccupancyGrid, spec: &PoseGridSpec) -> Self {
        let (w, h) = occ.extent();
        Self {
            xy_step: spec.xy_step,
            n_theta: spec.n_theta,
            n_rays: spec.n_rays,
            origin: [occ.origin().0, occ.origin().1],
            nx: (w / spec.xy_step - 1e-9).ceil().max(1.0) as u32,
            ny: (h / spec.xy_step - 1e-9).ceil().max(1.0) as u32,
        }
    }

    pub fn pose_of(&self, k: PoseKey) -> Pose {
        Pose::new(
            self.origin[0] + (k.ix as f64 + 0.5) * self.xy_step,
            self.origin[1] + (k.iy as f64 + 0.5) * self.xy_step,
            k.itheta as f64 * TAU / self.n_theta as f64,
        )
    }

    /// Key of the lattice point nearest to `pose`, if it lies on the lattice.
    pub fn key_of(&self, pose: &Pose) -> Option<PoseKey> {
        let fx = ((pose.x - self.origin[0]) / self.xy_step).floor();
        let fy = ((pose.y - self.origin[1]) / self.xy_step).floor();
        if !(fx >= 0.0 && fy >= 0.0 && fx < self.nx as f64 && fy < self.ny as f64) {
            return None;
        }
        let bin = TAU / self.n_theta as f64;
        let it = (pose.theta.rem_euclid(TAU) / bin).round() as u32 % self.n_theta;
        Some(PoseKey {
            ix: fx as u32,
            iy: fy as u32,
            itheta: it,
        })
    }

    fn dense_index(&self, k: PoseKey) -> usize {
        ((k.iy as usize * self.nx as usize) + k.ix as usize) * self.n_theta as usize + k.itheta as usize
    }

    fn len(&self) -> usize {
        self.nx as usize * self.ny as usize * self.n_theta as usize
    }
}

/// A stored expected view, read through [`SemanticSignature`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntryView<'a> {
    num_classes: usize,
    stats: &'a [ClassStat],
}

impl EntryView<'_> {
    pub fn to_vector(&self) -> SemanticVector {
        SemanticVector::from_stats(self.num_classes, self.stats.iter().copied())
    }

    pub fn stats(&self) -> &[ClassStat] {
        self.stats
    }
}

impl SemanticSignature for EntryView<'_> {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn visible_stats(&self) -> impl Iterator<Item = ClassStat> + '_ {
        self.stats.iter().copied()
    }
}

const NO_ENTRY: u32 = u32::MAX;

/// Bitset words per parallel scoring task.
const SCORE_CHUNK_WORDS: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticViewBank {
    lattice: PoseLattice,
    num_classes: usize,
    keys: Vec<PoseKey>,
    /// `stats[offsets[i]..offsets[i + 1]]` belongs to entry `i`.
    offsets: Vec<u32>,
    stats: Vec<ClassStat>,
    /// Total count of each entry.
    totals: Vec<f64>,
    dense: Vec<u32>,
    class_to_poses: Vec<Vec<u32>>,
}

impl SemanticViewBank {
    /// Renders the expected view at every free lattice point and heading.
    pub fn precompute<R: RangeCaster + ?Sized>(
        caster: &R,
        sem: &SemanticVoxelGrid,
        cam: &CameraModel,
        spec: &PoseGridSpec,
    ) -> Result<Self> {
        spec.validate()?;
        let occ = caster.grid();
        if !sem.covers(occ) {
            return Err(Error::MapMismatch("semantic grid does not cover the occupancy grid".into()));
        }
        let lattice = PoseLattice::for_grid(occ, spec);
        let mut keys = Vec::new();
        for ix in 0..lattice.nx {
            for iy in 0..lattice.ny {
                let k = PoseKey { ix, iy, itheta: 0 };
                let p = lattice.pose_of(k);
                if occ.is_free_at(p.x, p.y) {
                    keys.extend((0..lattice.n_theta).map(|itheta| PoseKey { itheta, ..k }));
                }
            }
        }
        let views = keys
            .par_iter()
            .map(|k| {
                let v = expected_semantic_view(caster, sem, &lattice.pose_of(*k), cam, spec.n_rays)?;
                Ok(v.visible_stats().collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::assemble(lattice, sem.num_classes(), keys, views)
    }

    fn assemble(
        lattice: PoseLattice,
        num_classes: usize,
        keys: Vec<PoseKey>,
        views: Vec<Vec<ClassStat>>,
    ) -> Result<Self> {
        if keys.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::MapMismatch("bank keys must be unique and ascending".into()));
        }
        let mut dense = vec![NO_ENTRY; lattice.len()];
        let mut offsets = Vec::with_capacity(keys.len() + 1);
        let mut stats = Vec::new();
        let mut totals = Vec::with_capacity(keys.len());
        let mut class_to_poses = vec![Vec::new(); num_classes];
        offsets.push(0);
        for (i, (k, view)) in keys.iter().zip(views).enumerate() {
            if k.ix >= lattice.nx || k.iy >= lattice.ny || k.itheta >= lattice.n_theta {
                return Err(Error::MapMismatch(format!("bank key {k:?} outside the pose lattice")));
            }
            dense[lattice.dense_index(*k)] = i as u32;
            for s in &view {
                if s.class >= num_classes {
                    return Err(Error::InvalidClass {
                        class: s.class,
                        num_classes,
                    });
                }
                class_to_poses[s.class].push(i as u32);
            }
            totals.push(view.iter().map(|s| s.count).sum());
            stats.extend(view);
            offsets.push(stats.len() as u32);
        }
        Ok(Self {
            lattice,
            num_classes,
            keys,
            offsets,
            stats,
            totals,
            dense,
            class_to_poses,
        })
    }

    pub fn lattice(&self) -> &PoseLattice {
        &self.lattice
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Keys in ascending order.
    pub fn keys(&self) -> &[PoseKey] {
        &self.keys
    }

    pub fn pose_of(&self, k: PoseKey) -> Pose {
        self.lattice.pose_of(k)
    }

    fn view_at(&self, i: usize) -> EntryView<'_> {
        EntryView {
            num_classes: self.num_classes,
            stats: &self.stats[self.offsets[i] as usize..self.offsets[i + 1] as usize],
        }
    }

    pub fn entry(&self, k: PoseKey) -> Option<EntryView<'_>> {
        if k.ix >= self.lattice.nx || k.iy >= self.lattice.ny || k.itheta >= self.lattice.n_theta {
            return None;
        }
        match self.dense[self.lattice.dense_index(k)] {
            NO_ENTRY => None,
            i => Some(self.view_at(i as usize)),
        }
    }

    /// Stored view at the lattice point nearest to `pose`.
    pub fn lookup(&self, pose: &Pose) -> Option<EntryView<'_>> {
        self.entry(self.lattice.key_of(pose)?)
    }

    pub fn iter(&self) -> impl Iterator<Item = (PoseKey, EntryView<'_>)> {
        self.keys.iter().enumerate().map(|(i, k)| (*k, self.view_at(i)))
    }

    /// Keys whose view contains `class`, ascending.
    pub fn poses_for_class(&self, class: usize) -> impl Iterator<Item = PoseKey> + '_ {
        self.class_to_poses
            .get(class)
            .into_iter()
            .flatten()
            .map(|&i| self.keys[i as usize])
    }

    /// Bitset over entry indices of the union of the inverse-index lists.
    fn candidate_bits<Z: SemanticSignature + ?Sized>(&self, z: &Z) -> Result<Vec<u64>> {
        if z.num_classes() != self.num_classes {
            return Err(Error::LengthMismatch(format!(
                "observation has {} classes, bank {}",
                z.num_classes(),
                self.num_classes
            )));
        }
        let mut bits = vec![0u64; self.len().div_ceil(64)];
        let mut any = false;
        for s in z.visible_stats() {
            any = true;
            for &i in &self.class_to_poses[s.class] {
                bits[i as usize / 64] |= 1 << (i % 64);
            }
        }
        if !any {
            return Err(Error::InsufficientSemantics);
        }
        Ok(bits)
    }

    fn candidate_indices<Z: SemanticSignature + ?Sized>(&self, z: &Z) -> Result<Vec<u32>> {
        let mut out = Vec::new();
        for_each_bit(&self.candidate_bits(z)?, |i| out.push(i));
        Ok(out)
    }

    fn score_entry(&self, q: &SimilarityQuery, i: usize) -> f64 {
        q.score_stats(self.view_at(i).stats.iter().copied(), self.totals[i])
    }

    /// Union of the inverse-index lists of every class visible in `z`.
    pub fn candidates_for<Z: SemanticSignature + ?Sized>(&self, z: &Z) -> Result<Vec<PoseKey>> {
        Ok(self
            .candidate_indices(z)?
            .into_iter()
            .map(|i| self.keys[i as usize])
            .collect())
    }

    /// The `k` best-scoring candidates, by descending similarity with ties
    /// broken by ascending key.
    pub fn top_k_keys<Z: SemanticSignature + ?Sized>(
        &self,
        z: &Z,
        w: &SimilarityWeights,
        fov: f64,
        k: usize,
    ) -> Result<Vec<(PoseKey, f64)>> {
        if k == 0 {
            return Err(invalid("k", "must be >= 1"));
        }
        let bits = self.candidate_bits(z)?;
        let query = SimilarityQuery::new(z, w, fov)?;
        let best = bits
            .par_chunks(SCORE_CHUNK_WORDS)
            .enumerate()
            .map(|(c, words)| {
                let mut best = BestK::new(k);
                let base = (c * SCORE_CHUNK_WORDS * 64) as u32;
                for_each_bit(words, |i| best.offer(base + i, self.score_entry(&query, (base + i) as usize)));
                best
            })
            .reduce(|| BestK::new(k), BestK::merge);
        Ok(best.into_keys(&self.keys))
    }

    /// Same as [`Self::top_k_keys`] with keys decoded to poses.
    pub fn top_k_poses<Z: SemanticSignature + ?Sized>(
        &self,
        z: &Z,
        w: &SimilarityWeights,
        fov: f64,
        k: usize,
    ) -> Result<Vec<(Pose, f64)>> {
        Ok(self
            .top_k_keys(z, w, fov, k)?
            .into_iter()
            .map(|(key, s)| (self.pose_of(key), s))
            .collect())
    }

    /// Scores every entry, candidate or not. Reference for testing.
    pub fn top_k_exhaustive<Z: SemanticSignature + ?Sized>(
        &self,
        z: &Z,
        w: &SimilarityWeights,
        fov: f64,
        k: usize,
    ) -> Result<Vec<(PoseKey, f64)>> {
        if k == 0 {
            return Err(invalid("k", "must be >= 1"));
        }
        let query = SimilarityQuery::new(z, w, fov)?;
        if z.num_classes() != self.num_classes || query.is_empty() {
            return Err(if query.is_empty() {
                Error::InsufficientSemantics
            } else {
                Error::LengthMismatch(format!("observation has {} classes, bank {}", z.num_classes(), self.num_classes))
            });
        }
        let mut best = BestK::new(k);
        for i in 0..self.len() {
            best.offer(i as u32, self.score_entry(&query, i));
        }
        Ok(best.into_keys(&self.keys))
    }

    /// Checks that every key decodes to a free pose of `occ`.
    pub fn check_free(&self, occ: &OccupancyGrid) -> Result<()> {
        for k in &self.keys {
            let p = self.pose_of(*k);
            if !occ.is_free_at(p.x, p.y) {
                return Err(Error::MapMismatch(format!("bank key {k:?} is not in free space")));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string(&BankFile::from(self))?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f: BankFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        Self::try_from(f)
    }
}

/// Keeps the `k` best `(index, score)` pairs; indices ascend with keys, so
/// ties resolve to the smaller key.
fn for_each_bit(bits: &[u64], mut f: impl FnMut(u32)) {
    for (w, &word) in bits.iter().enumerate() {
        let mut b = word;
        while b != 0 {
            f((w * 64) as u32 + b.trailing_zeros());
            b &= b - 1;
        }
    }
}

/// The `k` best (index, score) pairs seen so far, by descending score with
/// ties broken by ascending index.
struct BestK {
    k: usize,
    items: Vec<(u32, f64)>,
}

impl BestK {
    fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    fn before(a: (u32, f64), b: (u32, f64)) -> bool {
        a.1 > b.1 || (a.1 == b.1 && a.0 < b.0)
    }

    fn offer(&mut self, i: u32, s: f64) {
        if self.items.len() == self.k && !Self::before((i, s), self.items[self.k - 1]) {
            return;
        }
        let pos = self.items.partition_point(|&x| Self::before(x, (i, s)));
        self.items.insert(pos, (i, s));
        self.items.truncate(self.k);
    }

    fn merge(mut self, other: Self) -> Self {
        for (i, s) in other.items {
            self.offer(i, s);
        }
        self
    }

    fn into_keys(self, keys: &[PoseKey]) -> Vec<(PoseKey, f64)> {
        self.items.into_iter().map(|(i, s)| (keys[i as usize], s)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankEntry {
    pub key: PoseKey,
    pub counts: Vec<f64>,
    pub mean_range: Vec<f64>,
    pub mean_bearing: Vec<f64>,
}

/// Portable JSON form of a bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankFile {
    pub spec: PoseLattice,
    pub num_classes: usize,
    pub entries: Vec<BankEntry>,
    pub class_to_poses: Vec<Vec<PoseKey>>,
}

impl From<&SemanticViewBank> for BankFile {
    fn from(b: &SemanticViewBank) -> Self {
        Self {
            spec: b.lattice,
            num_classes: b.num_classes,
            entries: b
                .iter()
                .map(|(key, v)| {
                    let d = v.to_vector();
                    BankEntry {
                        key,
                        counts: d.counts().to_vec(),
                        mean_range: d.mean_range().to_vec(),
                        mean_bearing: d.mean_bearing().to_vec(),
                    }
                })
                .collect(),
            class_to_poses: (0..b.num_classes)
                .map(|c| b.poses_for_class(c).collect())
                .collect(),
        }
    }
}

impl TryFrom<BankFile> for SemanticViewBank {
    type Error = Error;

    fn try_from(f: BankFile) -> Result<Self> {
        let spec = PoseGridSpec {
            xy_step: f.spec.xy_step,
            n_theta: f.spec.n_theta,
            n_rays: f.spec.n_rays,
        };
        spec.validate()?;
        let mut keys = Vec::with_capacity(f.entries.len());
        let mut views = Vec::with_capacity(f.entries.len());
        for e in f.entries {
            if e.counts.len() != f.num_classes {
                return Err(Error::LengthMismatch(format!(
                    "entry {:?} has {} counts for {} classes",
                    e.key,
                    e.counts.len(),
                    f.num_classes
                )));
            }
            let v = SemanticVector::from_parts(e.counts, e.mean_range, e.mean_bearing)?;
            keys.push(e.key);
            views.push(v.visible_stats().collect());
        }
        let bank = Self::assemble(f.spec, f.num_classes, keys, views)?;
        let rebuilt: Vec<Vec<PoseKey>> = (0..bank.num_classes)
            .map(|c| bank.poses_for_class(c).collect())
            .collect();
        if rebuilt != f.class_to_poses {
            return Err(Error::MapMismatch(
                "class_to_poses disagrees with the stored entry masks".into(),
            ));
        }
        Ok(bank)
    }
}

/// Angular distance between two headings, for callers comparing key poses.
pub fn heading_gap(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}
