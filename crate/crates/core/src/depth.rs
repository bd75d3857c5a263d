//! Planar range scans synthesized from depth images, and the beam end-point
//! mixture likelihood used to weight particles against them.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::world::{fov_bearings, CameraModel, Pose, RangeCaster};

/// Per-beam log-density floor, in nats.
pub const LOG_FLOOR: f64 = -30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamScan {
    /// Relative bearings, strictly increasing.
    pub bearings: Vec<f64>,
    pub ranges: Vec<f64>,
    pub z_max: f64,
}

impl BeamScan {
    pub fn new(bearings: Vec<f64>, ranges: Vec<f64>, z_max: f64) -> Result<Self> {
        if bearings.len() != ranges.len() {
            return Err(crate::Error::LengthMismatch(format!(
                "{} bearings vs {} ranges",
                bearings.len(),
                ranges.len()
            )));
        }
        if !(z_max > 0.0) {
            return Err(invalid("z_max", "must be > 0"));
        }
        if bearings.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("bearings", "must be strictly increasing"));
        }
        if ranges.iter().any(|r| !(*r >= 0.0 && *r <= z_max)) {
            return Err(invalid("ranges", format!("must lie in [0, {z_max}]")));
        }
        Ok(Self {
            bearings,
            ranges,
            z_max,
        })
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeamModelParams {
    pub sigma_hit: f64,
    pub lambda_short: f64,
    pub z_max: f64,
    pub w_hit: f64,
    pub w_short: f64,
    pub w_max: f64,
    pub w_rand: f64,
    /// Width of the box standing in for the max-range spike.
    pub max_eps: f64,
    /// Evaluate every `subsample`-th beam.
    pub subsample: usize,
}

impl Default for BeamModelParams {
    fn default() -> Self {
        Self {
            sigma_hit: 0.1,
            lambda_short: 0.5,
            z_max: 8.0,
            w_hit: 0.8,
            w_short: 0.1,
            w_max: 0.05,
            w_rand: 0.05,
            max_eps: 0.01,
            subsample: 4,
        }
    }
}

impl BeamModelParams {
    pub fn with_weights(mut self, w_hit: f64, w_short: f64, w_max: f64, w_rand: f64) -> Self {
        self.w_hit = w_hit;
        self.w_short = w_short;
        self.w_max = w_max;
        self.w_rand = w_rand;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_hit > 0.0) {
            return Err(invalid("sigma_hit", "must be > 0"));
        }
        if !(self.lambda_short > 0.0) {
            return Err(invalid("lambda_short", "must be > 0"));
        }
        if !(self.z_max > 0.0) {
            return Err(invalid("z_max", "must be > 0"));
        }
        if !(self.max_eps > 0.0) {
            return Err(invalid("max_eps", "must be > 0"));
        }
        if self.subsample == 0 {
            return Err(invalid("subsample", "must be >= 1"));
        }
        let w = [self.w_hit, self.w_short, self.w_max, self.w_rand];
        if w.iter().any(|x| !(*x >= 0.0)) {
            return Err(invalid("beam weights", "must be non-negative"));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(invalid("beam weights", format!("must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

/// Planar scan from the central band of a depth image.
///
/// Columns are assigned to `k` equal angular bins across the camera's field
/// of view by the bearing of their pixel centers. Each beam takes the lower
/// median of the valid depths in its bin and converts it to a planar range
/// along the bin's central bearing. Bins without valid depth read `z_max`.
/// Depths that are non-positive or non-finite are invalid.
pub fn scan_from_depth(band: &DMatrix<f64>, cam: &CameraModel, k: usize, z_max: f64) -> Result<BeamScan> {
    if band.is_empty() {
        return Err(invalid("depth band", "must not be empty"));
    }
    if k == 0 || band.ncols() < k {
        return Err(invalid("beam count", format!("need 1 <= K <= width, got K = {k}")));
    }
    if !(z_max > 0.0) {
        return Err(invalid("z_max", "must be > 0"));
    }
    let bearings = fov_bearings(cam.fov, k);
    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); k];
    for u in 0..band.ncols() {
        let beta = cam.column_bearing(u as f64 + 0.5);
        let b = ((beta + cam.fov / 2.0) / cam.fov * k as f64).floor();
        if b < 0.0 || b >= k as f64 {
            continue;
        }
        let bin = &mut bins[b as usize];
        bin.extend(band.column(u).iter().copied().filter(|d| *d > 0.0 && d.is_finite()));
    }
    let ranges = bins
        .iter_mut()
        .zip(&bearings)
        .map(|(bin, &beta)| {
            if bin.is_empty() {
                return z_max;
            }
            bin.sort_by(f64::total_cmp);
            let median = bin[(bin.len() - 1) / 2];
            (median / beta.cos()).clamp(0.0, z_max)
        })
        .collect();
    BeamScan::new(bearings, ranges, z_max)
}

fn check_range(name: &'static str, v: f64, z_max: f64) -> Result<()> {
    if !(v >= 0.0 && v <= z_max) {
        return Err(invalid(name, format!("{v} outside [0, {z_max}]")));
    }
    Ok(())
}

/// Mixture density of measuring `z` when the map predicts `zhat`.
///
/// The short-return component is the exponential truncated to `[0, zhat]`
/// and renormalized, so that every component integrates to one over
/// `[0, z_max]`.
pub fn beam_likelihood(z: f64, zhat: f64, p: &BeamModelParams) -> Result<f64> {
    check_range("z", z, p.z_max)?;
    check_range("zhat", zhat, p.z_max)?;
    Ok(beam_density(z, zhat, p))
}

fn beam_density(z: f64, zhat: f64, p: &BeamModelParams) -> f64 {
    let mut d = 0.0;
    if p.w_hit > 0.0 {
        let e = (z - zhat) / p.sigma_hit;
        d += p.w_hit * (-0.5 * e * e).exp() / (p.sigma_hit * (2.0 * std::f64::consts::PI).sqrt());
    }
    if p.w_short > 0.0 && zhat > 0.0 && z <= zhat {
        let norm = -(-p.lambda_short * zhat).exp_m1();
        d += p.w_short * p.lambda_short * (-p.lambda_short * z).exp() / norm;
    }
    if p.w_max > 0.0 && (z - p.z_max).abs() < p.max_eps {
        d += p.w_max / p.max_eps;
    }
    d + p.w_rand / p.z_max
}

/// Log-likelihood of a scan from `pose`, summing floored per-beam
/// log-densities over every `subsample`-th beam in index order.
pub fn depth_log_likelihood<R: RangeCaster + ?Sized>(
    scan: &BeamScan,
    pose: &Pose,
    caster: &R,
    p: &BeamModelParams,
) -> Result<f64> {
    let origin = pose.position();
    let mut total = 0.0;
    for k in (0..scan.len()).step_by(p.subsample.max(1)) {
        let z = scan.ranges[k].clamp(0.0, p.z_max);
        let zhat = caster.cast(origin, pose.theta + scan.bearings[k], p.z_max)?;
        let d = beam_density(z, zhat.min(p.z_max), p);
        total += if d > 0.0 { d.ln().max(LOG_FLOOR) } else { LOG_FLOOR };
    }
    Ok(total)
}

/// Noise-free scan rendered by ray casting from `pose`.
pub fn render_scan<R: RangeCaster + ?Sized>(caster: &R, pose: &Pose, fov: f64, k: usize, z_max: f64) -> Result<BeamScan> {
    let bearings = fov_bearings(fov, k);
    let ranges = bearings
        .iter()
        .map(|b| caster.cast(pose.position(), pose.theta + b, z_max))
        .collect::<Result<Vec<_>>>()?;
    BeamScan::new(bearings, ranges, z_max)
}
