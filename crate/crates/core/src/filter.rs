//! Semantic particle filter: odometry motion model, depth weighting, gated
//! semantic weighting with inverse-proposal injection, and systematic
//! resampling.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::SemanticViewBank;
use crate::depth::{depth_log_likelihood, BeamModelParams, BeamScan};
use crate::error::{invalid, Error, Result};
use crate::semantic::{similarity, SemanticVector, SimilarityWeights};
use crate::world::{expected_semantic_view, CameraModel, OccupancyGrid, Pose, RangeCaster, SemanticVoxelGrid};

/// Body-frame odometry increment between two frames.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OdometryDelta {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
}

impl OdometryDelta {
    pub fn new(dx: f64, dy: f64, dtheta: f64) -> Self {
        Self { dx, dy, dtheta }
    }

    pub fn between(from: &Pose, to: &Pose) -> Self {
        let (dx, dy, dtheta) = from.between(to);
        Self { dx, dy, dtheta }
    }

    pub fn translation(&self) -> f64 {
        self.dx.hypot(self.dy)
    }
}

/// Odometry noise, proportional to the size of each increment:
/// `σ_xy = sigma_trans·‖d‖` and `σ_θ = sigma_rot·(|dθ| + 0.1‖d‖)`, never
/// below the optional floors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionNoise {
    pub sigma_trans: f64,
    pub sigma_rot: f64,
    pub min_sigma_xy: f64,
    pub min_sigma_theta: f64,
}

impl Default for MotionNoise {
    fn default() -> Self {
        Self {
            sigma_trans: 0.02,
            sigma_rot: 0.02,
            min_sigma_xy: 0.0,
            min_sigma_theta: 0.0,
        }
    }
}

impl MotionNoise {
    pub fn zero() -> Self {
        Self {
            sigma_trans: 0.0,
            sigma_rot: 0.0,
            min_sigma_xy: 0.0,
            min_sigma_theta: 0.0,
        }
    }

    pub fn sigmas(&self, d: &OdometryDelta) -> (f64, f64) {
        let t = d.translation();
        (
            (self.sigma_trans * t).max(self.min_sigma_xy),
            (self.sigma_rot * (d.dtheta.abs() + 0.1 * t)).max(self.min_sigma_theta),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub n_particles: usize,
    /// Similarity below which the semantic branch may open.
    pub tau_sim: f64,
    /// Detection mass above which the semantic branch may open.
    pub tau_kappa: f64,
    pub k_inject: usize,
    pub inject_fraction: f64,
    pub motion: MotionNoise,
    pub resample_ess_frac: f64,
    /// Floor `ε` of the semantic factor `ε + (1 − ε)·S`.
    pub semantic_floor: f64,
    pub similarity: SimilarityWeights,
    pub beam: BeamModelParams,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            n_particles: 1500,
            tau_sim: 0.6,
            tau_kappa: 3.0,
            k_inject: 10,
            inject_fraction: 0.25,
            motion: MotionNoise::default(),
            resample_ess_frac: 1.0,
            semantic_floor: 0.05,
            similarity: SimilarityWeights::default(),
            beam: BeamModelParams::default(),
        }
    }
}

impl FilterConfig {
    /// The same configuration with the semantic branch disabled.
    pub fn depth_only(mut self) -> Self {
        self.tau_sim = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(invalid("n_particles", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.tau_sim) {
            return Err(invalid("tau_sim", "must lie in [0, 1]"));
        }
        if !(self.tau_kappa >= 0.0) {
            return Err(invalid("tau_kappa", "must be >= 0"));
        }
        if self.k_inject == 0 {
            return Err(invalid("k_inject", "must be >= 1"));
        }
        if !(self.inject_fraction > 0.0 && self.inject_fraction < 1.0) {
            return Err(invalid("inject_fraction", "must lie in (0, 1)"));
        }
        let m = &self.motion;
        if [m.sigma_trans, m.sigma_rot, m.min_sigma_xy, m.min_sigma_theta]
            .iter()
            .any(|s| !(*s >= 0.0))
        {
            return Err(invalid("motion", "noise parameters must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.resample_ess_frac) {
            return Err(invalid("resample_ess_frac", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.semantic_floor) {
            return Err(invalid("semantic_floor", "must lie in [0, 1]"));
        }
        self.similarity.validate()?;
        self.beam.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSet {
    poses: Vec<Pose>,
    weights: Vec<f64>,
}

impl ParticleSet {
    /// Equally weighted set.
    pub fn uniform(poses: Vec<Pose>) -> Result<Self> {
        if poses.is_empty() {
            return Err(invalid("particles", "need at least one"));
        }
        let w = 1.0 / poses.len() as f64;
        let weights = vec![w; poses.len()];
        Ok(Self { poses, weights })
    }

    /// Set with explicit weights, normalized on construction.
    pub fn weighted(poses: Vec<Pose>, weights: Vec<f64>) -> Result<Self> {
        if poses.len() != weights.len() {
            return Err(Error::LengthMismatch(format!(
                "{} poses vs {} weights",
                poses.len(),
                weights.len()
            )));
        }
        if poses.is_empty() {
            return Err(invalid("particles", "need at least one"));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(invalid("weights", "must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(invalid("weights", "all zero"));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { poses, weights })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Effective sample size `1 / Σ w²`.
    pub fn ess(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Replaces the weights with `exp(log_w)` normalized, subtracting the
    /// maximum first. All-`-inf` input yields uniform weights.
    fn set_log_weights(&mut self, log_w: &[f64]) {
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY || max.is_nan() {
            let w = 1.0 / self.len() as f64;
            self.weights.iter_mut().for_each(|x| *x = w);
            return;
        }
        for (w, l) in self.weights.iter_mut().zip(log_w) {
            *w = (l - max).exp();
        }
        let total: f64 = self.weights.iter().sum();
        self.weights.iter_mut().for_each(|w| *w /= total);
    }
}

/// Particles spread uniformly over the free cells, with uniform heading.
pub fn init_global<R: Rng + ?Sized>(occ: &OccupancyGrid, n: usize, rng: &mut R) -> Result<ParticleSet> {
    let free: Vec<(usize, usize)> = occ.free_cells().collect();
    if free.is_empty() {
        return Err(Error::NoFreeSpace);
    }
    if n == 0 {
        return Err(invalid("n", "must be >= 1"));
    }
    let r = occ.resolution();
    let poses = (0..n)
        .map(|_| {
            let (ix, iy) = free[rng.random_range(0..free.len())];
            let (cx, cy) = occ.cell_center(ix, iy);
            let x = cx + (rng.random::<f64>() - 0.5) * r;
            let y = cy + (rng.random::<f64>() - 0.5) * r;
            let theta = rng.random_range(-PI..PI);
            Pose::new(x, y, theta)
        })
        .collect();
    ParticleSet::uniform(poses)
}

/// Particles drawn from a Gaussian around `center`, kept in free space.
pub fn init_around<R: Rng + ?Sized>(
    occ: &OccupancyGrid,
    center: &Pose,
    sigma_xy: f64,
    sigma_theta: f64,
    n: usize,
    rng: &mut R,
) -> Result<ParticleSet> {
    if !occ.is_free_at(center.x, center.y) {
        return Err(Error::NoFreeSpace);
    }
    if n == 0 {
        return Err(invalid("n", "must be >= 1"));
    }
    let poses = (0..n)
        .map(|_| jittered(occ, center, sigma_xy, sigma_theta, rng))
        .collect();
    ParticleSet::uniform(poses)
}

const JITTER_ATTEMPTS: usize = 10;

/// Gaussian perturbation of a free pose that stays in free space; falls
/// back to the pose itself after a few rejected draws.
fn jittered<R: Rng + ?Sized>(occ: &OccupancyGrid, center: &Pose, sxy: f64, sth: f64, rng: &mut R) -> Pose {
    for _ in 0..JITTER_ATTEMPTS {
        let ex: f64 = rng.sample(StandardNormal);
        let ey: f64 = rng.sample(StandardNormal);
        let et: f64 = rng.sample(StandardNormal);
        let p = Pose::new(center.x + sxy * ex, center.y + sxy * ey, center.theta + sth * et);
        if occ.is_free_at(p.x, p.y) {
            return p;
        }
    }
    *center
}

/// Propagates every particle through the odometry increment plus Gaussian
/// noise. Three normal draws are consumed per particle whatever the noise
/// level, so the random stream does not depend on the configuration.
pub fn motion_update<R: Rng + ?Sized>(p: &mut ParticleSet, delta: &OdometryDelta, noise: &MotionNoise, rng: &mut R) {
    let (sxy, sth) = noise.sigmas(delta);
    for pose in &mut p.poses {
        let ex: f64 = rng.sample(StandardNormal);
        let ey: f64 = rng.sample(StandardNormal);
        let et: f64 = rng.sample(StandardNormal);
        *pose = pose.compose(delta.dx + sxy * ex, delta.dy + sxy * ey, delta.dtheta + sth * et);
    }
}

/// Weighted mean position and circular mean heading.
pub fn estimate_pose(p: &ParticleSet) -> Result<Pose> {
    let (mut x, mut y, mut s, mut c, mut total) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (pose, &w) in p.poses.iter().zip(&p.weights) {
        x += w * pose.x;
        y += w * pose.y;
        s += w * pose.theta.sin();
        c += w * pose.theta.cos();
        total += w;
    }
    if !(total > 0.0) {
        return Err(invalid("weights", "cannot estimate from an all-zero set"));
    }
    Ok(Pose::new(x / total, y / total, s.atan2(c)))
}

/// Low-variance (systematic) resampling to uniform weights.
pub fn resample<R: Rng + ?Sized>(p: &mut ParticleSet, rng: &mut R) {
    let n = p.len();
    let step = 1.0 / n as f64;
    let mut u = rng.random::<f64>() * step;
    let mut cum = p.weights[0];
    let mut i = 0;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        while u > cum && i + 1 < n {
            i += 1;
            cum += p.weights[i];
        }
        out.push(p.poses[i]);
        u += step;
    }
    p.poses = out;
    p.weights.iter_mut().for_each(|w| *w = step);
}

/// Everything a filter step reads besides the observation.
#[derive(Clone, Copy)]
pub struct FilterMaps<'a> {
    pub caster: &'a dyn RangeCaster,
    pub sem: &'a SemanticVoxelGrid,
    pub cam: &'a CameraModel,
    pub bank: &'a SemanticViewBank,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    /// Similarity of the observation to the view expected at the prior
    /// estimate; 0 when it cannot be computed.
    pub sim: f64,
    pub gate_open: bool,
    pub injected: usize,
    pub ess: f64,
    pub resampled: bool,
}

fn depth_log_weights(p: &ParticleSet, scan: &BeamScan, caster: &dyn RangeCaster, beam: &BeamModelParams) -> Result<Vec<f64>> {
    let grid = caster.grid();
    p.poses
        .par_iter()
        .map(|pose| {
            if !grid.contains(pose.x, pose.y) {
                return Ok(f64::NEG_INFINITY);
            }
            depth_log_likelihood(scan, pose, caster, beam)
        })
        .collect()
}

fn prior_log(w: f64) -> f64 {
    if w > 0.0 {
        w.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// `ln(ε + (1 − ε)·S)` with `S` read from the bank entry nearest to the pose.
fn semantic_log_factor(
    pose: &Pose,
    z: &SemanticVector,
    bank: &SemanticViewBank,
    fov: f64,
    cfg: &FilterConfig,
) -> Result<f64> {
    let s = match bank.lookup(pose) {
        Some(view) => match similarity(z, &view, &cfg.similarity, fov) {
            Ok(s) => s,
            Err(Error::InsufficientSemantics) => 0.0,
            Err(e) => return Err(e),
        },
        None => 0.0,
    };
    Ok((cfg.semantic_floor + (1.0 - cfg.semantic_floor) * s).ln())
}

fn finish<R: Rng + ?Sized>(p: &mut ParticleSet, frac: f64, rng: &mut R) -> Result<(Pose, f64, bool)> {
    let estimate = estimate_pose(p)?;
    let ess = p.ess();
    let resampled = ess < frac * p.len() as f64;
    if resampled {
        resample(p, rng);
    }
    Ok((estimate, ess, resampled))
}

/// Plain Monte Carlo localization step: motion, depth weighting,
/// resampling. Reference path for the semantic filter with its gate closed.
pub fn mcl_step<R: Rng + ?Sized>(
    p: &mut ParticleSet,
    delta: &OdometryDelta,
    scan: &BeamScan,
    caster: &dyn RangeCaster,
    cfg: &FilterConfig,
    rng: &mut R,
) -> Result<(Pose, StepDiagnostics)> {
    motion_update(p, delta, &cfg.motion, rng);
    let ll = depth_log_weights(p, scan, caster, &cfg.beam)?;
    let log_w: Vec<f64> = p.weights.iter().zip(&ll).map(|(w, l)| prior_log(*w) + l).collect();
    p.set_log_weights(&log_w);
    let (estimate, ess, resampled) = finish(p, cfg.resample_ess_frac, rng)?;
    Ok((
        estimate,
        StepDiagnostics {
            sim: 0.0,
            gate_open: false,
            injected: 0,
            ess,
            resampled,
        },
    ))
}

/// One step of the semantic filter.
///
/// After the motion update the observation is compared with the view
/// expected at the current estimate. When they disagree (similarity below
/// `tau_sim`) and enough items were detected (mass above `tau_kappa`), the
/// lowest-weight `inject_fraction` of the particles is replaced by jittered
/// copies of the best-matching bank poses, and every particle's weight is
/// multiplied by its semantic factor. Otherwise particles are weighted by
/// depth alone. Returns the weighted-mean estimate before resampling.
pub fn step<R: Rng + ?Sized>(
    p: &mut ParticleSet,
    delta: &OdometryDelta,
    scan: &BeamScan,
    z: &SemanticVector,
    maps: &FilterMaps<'_>,
    cfg: &FilterConfig,
    rng: &mut R,
) -> Result<(Pose, StepDiagnostics)> {
    motion_update(p, delta, &cfg.motion, rng);
    let grid = maps.caster.grid();
    let fov = maps.cam.fov;

    let prior_estimate = estimate_pose(p)?;
    let sim = if grid.contains(prior_estimate.x, prior_estimate.y) {
        let n_rays = maps.bank.lattice().n_rays;
        let zhat = expected_semantic_view(maps.caster, maps.sem, &prior_estimate, maps.cam, n_rays)?;
        match similarity(z, &zhat, &cfg.similarity, fov) {
            Ok(s) => s,
            Err(Error::InsufficientSemantics) => 0.0,
            Err(e) => return Err(e),
        }
    } else {
        0.0
    };
    let gate_open = sim < cfg.tau_sim && z.count_mass() > cfg.tau_kappa;

    let mut ll = depth_log_weights(p, scan, maps.caster, &cfg.beam)?;
    let mut injected = 0;
    let log_w: Vec<f64> = if gate_open {
        let top = maps.bank.top_k_poses(z, &cfg.similarity, fov, cfg.k_inject)?;
        if top.is_empty() {
            p.weights.iter().zip(&ll).map(|(w, l)| prior_log(*w) + l).collect()
        } else {
            let mut sem_log = p
                .poses
                .par_iter()
                .map(|pose| semantic_log_factor(pose, z, maps.bank, fov, cfg))
                .collect::<Result<Vec<_>>>()?;
            let mut prior: Vec<f64> = p.weights.iter().map(|w| prior_log(*w)).collect();

            let n = p.len();
            let n_inject = ((cfg.inject_fraction * n as f64).floor() as usize).min(n);
            let combined: Vec<f64> = (0..n).map(|i| prior[i] + ll[i] + sem_log[i]).collect();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| combined[a].total_cmp(&combined[b]).then(a.cmp(&b)));
            let mut victims = order[..n_inject].to_vec();
            victims.sort_unstable();

            let lattice = maps.bank.lattice();
            let sxy = lattice.xy_step;
            let sth = std::f64::consts::TAU / lattice.n_theta as f64;
            let uniform = -(n as f64).ln();
            for (j, &i) in victims.iter().enumerate() {
                let (center, _) = top[j % top.len()];
                p.poses[i] = jittered(grid, &center, sxy, sth, rng);
                prior[i] = uniform;
            }
            for &i in &victims {
                let pose = p.poses[i];
                ll[i] = depth_log_likelihood(scan, &pose, maps.caster, &cfg.beam)?;
                sem_log[i] = semantic_log_factor(&pose, z, maps.bank, fov, cfg)?;
            }
            injected = n_inject;
            (0..n).map(|i| prior[i] + ll[i] + sem_log[i]).collect()
        }
    } else {
        p.weights.iter().zip(&ll).map(|(w, l)| prior_log(*w) + l).collect()
    };
    p.set_log_weights(&log_w);
    let (estimate, ess, resampled) = finish(p, cfg.resample_ess_frac, rng)?;
    Ok((
        estimate,
        StepDiagnostics {
            sim,
            gate_open,
            injected,
            ess,
            resampled,
        },
    ))
}
