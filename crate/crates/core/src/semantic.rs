//! Semantic observation vectors and the composite similarity between them.
//!
//! A semantic vector summarizes what a camera sees as per-class item counts
//! plus the mean range and mean bearing of each visible class. Two vectors are
//! compared by a weighted sum of a count term (one minus the base-2
//! Jensen-Shannon distance of the normalized counts), a range term and a
//! bearing term. The spatial terms only look at classes visible in both.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::world::wrap_angle;

/// One detected item, in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class: usize,
    pub range: f64,
    pub bearing: f64,
}

/// Per-class statistics of one visible class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStat {
    pub class: usize,
    pub count: f64,
    pub range: f64,
    pub bearing: f64,
}

/// Anything that can be read as a semantic vector: visible classes in
/// ascending class order, each with a positive count.
pub trait SemanticSignature {
    fn num_classes(&self) -> usize;
    fn visible_stats(&self) -> impl Iterator<Item = ClassStat> + '_;

    fn total_count(&self) -> f64 {
        self.visible_stats().map(|s| s.count).sum()
    }
}

/// Dense semantic vector over `C` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticVector {
    counts: Vec<f64>,
    mean_range: Vec<f64>,
    mean_bearing: Vec<f64>,
    mask: Vec<bool>,
}

impl SemanticVector {
    pub fn empty(num_classes: usize) -> Self {
        Self {
            counts: vec![0.0; num_classes],
            mean_range: vec![0.0; num_classes],
            mean_bearing: vec![0.0; num_classes],
            mask: vec![false; num_classes],
        }
    }

    /// Builds a vector from its three sub-vectors; the mask follows the counts
    /// and unmasked spatial entries are zeroed.
    pub fn from_parts(counts: Vec<f64>, mean_range: Vec<f64>, mean_bearing: Vec<f64>) -> Result<Self> {
        let c = counts.len();
        if mean_range.len() != c || mean_bearing.len() != c {
            return Err(Error::LengthMismatch(format!(
                "counts {c}, ranges {}, bearings {}",
                mean_range.len(),
                mean_bearing.len()
            )));
        }
        if let Some(bad) = counts.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(invalid("counts", format!("negative or non-finite count {bad}")));
        }
        let mask: Vec<bool> = counts.iter().map(|&n| n > 0.0).collect();
        let zero_unmasked = |v: Vec<f64>| {
            v.into_iter()
                .zip(&mask)
                .map(|(x, &m)| if m { x } else { 0.0 })
                .collect::<Vec<_>>()
        };
        let mean_range = zero_unmasked(mean_range);
        let mean_bearing = zero_unmasked(mean_bearing);
        if mean_range.iter().any(|r| *r < 0.0) {
            return Err(invalid("mean_range", "ranges must be non-negative"));
        }
        Ok(Self {
            counts,
            mean_range,
            mean_bearing,
            mask,
        })
    }

    pub fn from_stats(num_classes: usize, stats: impl IntoIterator<Item = ClassStat>) -> Self {
        let mut v = Self::empty(num_classes);
        for s in stats {
            if s.count > 0.0 {
                v.counts[s.class] = s.count;
                v.mean_range[s.class] = s.range;
                v.mean_bearing[s.class] = s.bearing;
                v.mask[s.class] = true;
            }
        }
        v
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn mean_range(&self) -> &[f64] {
        &self.mean_range
    }

    pub fn mean_bearing(&self) -> &[f64] {
        &self.mean_bearing
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|m| *m)
    }

    /// L1 norm of the count sub-vector.
    pub fn count_mass(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn visible_classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, m)| **m).map(|(c, _)| c)
    }
}

impl SemanticSignature for SemanticVector {
    fn num_classes(&self) -> usize {
        self.counts.len()
    }

    fn visible_stats(&self) -> impl Iterator<Item = ClassStat> + '_ {
        self.visible_classes().map(|c| ClassStat {
            class: c,
            count: self.counts[c],
            range: self.mean_range[c],
            bearing: self.mean_bearing[c],
        })
    }
}

/// Aggregates detections into a semantic vector.
pub fn build_semantic_vector(detections: &[Detection], num_classes: usize) -> Result<SemanticVector> {
    let mut counts = vec![0.0; num_classes];
    let mut ranges = vec![0.0; num_classes];
    let mut bearings = vec![0.0; num_classes];
    for d in detections {
        if d.class >= num_classes {
            return Err(Error::InvalidClass {
                class: d.class,
                num_classes,
            });
        }
        counts[d.class] += 1.0;
        ranges[d.class] += d.range;
        bearings[d.class] += d.bearing;
    }
    for c in 0..num_classes {
        if counts[c] > 0.0 {
            ranges[c] /= counts[c];
            bearings[c] /= counts[c];
        }
    }
    SemanticVector::from_parts(counts, ranges, bearings)
}

/// Weights of the count, range and bearing terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for SimilarityWeights {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            beta: 0.4,
            gamma: 0.2,
        }
    }
}

impl SimilarityWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let w = Self { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma < 0.0 {
            return Err(invalid("similarity weights", "must be non-negative"));
        }
        let sum = self.alpha + self.beta + self.gamma;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(invalid("similarity weights", format!("must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

/// Contribution of one class to the Jensen-Shannon sum, with `0 log 0 = 0`.
fn jsd_term(p: f64, q: f64) -> f64 {
    let m = 0.5 * (p + q);
    let mut t = 0.0;
    if p > 0.0 {
        t += p * (p / m).log2();
    }
    if q > 0.0 {
        t += q * (q / m).log2();
    }
    t
}

fn jsd_from_sum(sum: f64) -> f64 {
    (0.5 * sum).max(0.0).sqrt().min(1.0)
}

/// Base-2 Jensen-Shannon distance between two count vectors, each normalized
/// to a categorical distribution. A zero vector against a non-zero one is at
/// the maximum distance 1.
pub fn jsd(p_counts: &[f64], q_counts: &[f64]) -> Result<f64> {
    if p_counts.len() != q_counts.len() {
        return Err(Error::LengthMismatch(format!(
            "{} vs {} classes",
            p_counts.len(),
            q_counts.len()
        )));
    }
    if p_counts.iter().chain(q_counts).any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(invalid("counts", "must be finite and non-negative"));
    }
    let tp: f64 = p_counts.iter().sum();
    let tq: f64 = q_counts.iter().sum();
    if tp == 0.0 && tq == 0.0 {
        return Err(Error::InsufficientSemantics);
    }
    if tp == 0.0 || tq == 0.0 {
        return Ok(1.0);
    }
    let sum = p_counts
        .iter()
        .zip(q_counts)
        .map(|(p, q)| jsd_term(p / tp, q / tq))
        .sum();
    Ok(jsd_from_sum(sum))
}

/// Composite similarity in `[0, 1]`.
///
/// Returns [`Error::InsufficientSemantics`] when both vectors are empty. When
/// no class is visible in both, the range and bearing terms are 0.5.
pub fn similarity<A, B>(z: &A, zhat: &B, w: &SimilarityWeights, fov: f64) -> Result<f64>
where
    A: SemanticSignature + ?Sized,
    B: SemanticSignature + ?Sized,
{
    if z.num_classes() != zhat.num_classes() {
        return Err(Error::LengthMismatch(format!(
            "{} vs {} classes",
            z.num_classes(),
            zhat.num_classes()
        )));
    }
    if !(fov > 0.0) {
        return Err(invalid("fov", "must be > 0"));
    }
    let tp = z.total_count();
    let tq = zhat.total_count();
    if tp == 0.0 && tq == 0.0 {
        return Err(Error::InsufficientSemantics);
    }

    let mut a = z.visible_stats().peekable();
    let mut b = zhat.visible_stats().peekable();
    let mut js_sum = 0.0;
    let mut range_sq = 0.0;
    let mut bearing_sq = 0.0;
    let mut shared = 0usize;
    loop {
        let (p, q) = match (a.peek(), b.peek()) {
            (None, None) => break,
            (Some(_), None) => (a.next(), None),
            (None, Some(_)) => (None, b.next()),
            (Some(x), Some(y)) => match x.class.cmp(&y.class) {
                std::cmp::Ordering::Less => (a.next(), None),
                std::cmp::Ordering::Greater => (None, b.next()),
                std::cmp::Ordering::Equal => (a.next(), b.next()),
            },
        };
        let pn = p.map_or(0.0, |s| s.count / tp);
        let qn = q.map_or(0.0, |s| s.count / tq);
        js_sum += jsd_term(pn, qn);
        if let (Some(p), Some(q)) = (p, q) {
            shared += 1;
            range_sq += (p.range - q.range).powi(2);
            bearing_sq += wrap_angle((p.bearing - q.bearing).abs()).powi(2);
        }
    }

    let js = if tp == 0.0 || tq == 0.0 {
        1.0
    } else {
        jsd_from_sum(js_sum)
    };
    let s_counts = 1.0 - js;
    let (s_distance, s_angle) = if shared == 0 {
        (0.5, 0.5)
    } else {
        let d_distance = range_sq.sqrt();
        let d_angle = bearing_sq.sqrt();
        (1.0 / (1.0 + d_distance), (1.0 - d_angle / fov).clamp(0.0, 1.0))
    };
    Ok(w.alpha * s_counts + w.beta * s_distance + w.gamma * s_angle)
}

/// An observation prepared for scoring many stored views, as in inverse
/// queries. Agrees with [`similarity`] to rounding; logarithms are taken
/// only for classes visible on both sides.
#[derive(Debug, Clone)]
pub struct SimilarityQuery {
    /// Normalized count per class, 0 where not visible.
    p: Vec<f64>,
    range: Vec<f64>,
    bearing: Vec<f64>,
    n_visible: usize,
    mass: f64,
    w: SimilarityWeights,
    fov: f64,
}

impl SimilarityQuery {
    pub fn new<A: SemanticSignature + ?Sized>(z: &A, w: &SimilarityWeights, fov: f64) -> Result<Self> {
        if !(fov > 0.0) {
            return Err(invalid("fov", "must be > 0"));
        }
        let c = z.num_classes();
        let tp = z.total_count();
        let (mut p, mut range, mut bearing) = (vec![0.0; c], vec![0.0; c], vec![0.0; c]);
        let mut n_visible = 0;
        let mut mass = 0.0;
        for s in z.visible_stats() {
            p[s.class] = s.count / tp;
            range[s.class] = s.range;
            bearing[s.class] = s.bearing;
            mass += p[s.class];
            n_visible += 1;
        }
        Ok(Self {
            p,
            range,
            bearing,
            n_visible,
            mass,
            w: *w,
            fov,
        })
    }

    pub fn score<B: SemanticSignature + ?Sized>(&self, zhat: &B) -> Result<f64> {
        if zhat.num_classes() != self.p.len() {
            return Err(Error::LengthMismatch(format!(
                "{} vs {} classes",
                self.p.len(),
                zhat.num_classes()
            )));
        }
        let tq = zhat.total_count();
        if self.n_visible == 0 && tq == 0.0 {
            return Err(Error::InsufficientSemantics);
        }
        Ok(self.score_stats(zhat.visible_stats(), tq))
    }

    pub fn is_empty(&self) -> bool {
        self.n_visible == 0
    }

    /// Scores visible statistics whose counts sum to `tq`. The caller
    /// guarantees matching class counts and that not both sides are empty.
    pub(crate) fn score_stats(&self, stats: impl Iterator<Item = ClassStat>, tq: f64) -> f64 {
        let (mut shared_terms, mut shared_p, mut only_q) = (0.0, 0.0, 0.0);
        let (mut range_sq, mut bearing_sq) = (0.0, 0.0);
        let mut shared = 0usize;
        for s in stats {
            let q = s.count / tq;
            let p = self.p[s.class];
            if p > 0.0 {
                shared += 1;
                shared_terms += jsd_term(p, q);
                shared_p += p;
                range_sq += (self.range[s.class] - s.range).powi(2);
                bearing_sq += wrap_angle((self.bearing[s.class] - s.bearing).abs()).powi(2);
            } else {
                // jsd_term(0, q) == q
                only_q += q;
            }
        }
        let js = if self.n_visible == 0 || tq == 0.0 {
            1.0
        } else {
            let only_p = if shared == self.n_visible { 0.0 } else { self.mass - shared_p };
            jsd_from_sum(shared_terms + only_p + only_q)
        };
        let (s_distance, s_angle) = if shared == 0 {
            (0.5, 0.5)
        } else {
            (
                1.0 / (1.0 + range_sq.sqrt()),
                (1.0 - bearing_sq.sqrt() / self.fov).clamp(0.0, 1.0),
            )
        };
        self.w.alpha * (1.0 - js) + self.w.beta * s_distance + self.w.gamma * s_angle
    }
}
