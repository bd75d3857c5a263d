//! Ground-truth trajectories and corrupted sensor streams.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::depth::BeamScan;
use crate::error::{invalid, Error, Result};
use crate::filter::{MotionNoise, OdometryDelta};
use crate::semantic::Detection;
use crate::world::{fov_bearings, visible_columns, wrap_angle, CameraModel, OccupancyGrid, Pose, RangeCaster, SemanticVoxelGrid};

/// A person standing in front of the camera part of the time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OccluderSchedule {
    /// Length of one on/off cycle, seconds.
    pub period: f64,
    /// Fraction of each cycle during which the occluder is present.
    pub duty_cycle: f64,
    /// Time offset into the cycle at `t = 0`, seconds.
    pub phase: f64,
    /// Relative bearing of the sector center.
    pub sector_center: f64,
    pub sector_width: f64,
    /// Range at which the occluder returns depth.
    pub range: f64,
}

impl Default for OccluderSchedule {
    fn default() -> Self {
        Self {
            period: 6.0,
            duty_cycle: 0.3,
            phase: 0.0,
            sector_center: 0.0,
            sector_width: 0.6,
            range: 0.8,
        }
    }
}

impl OccluderSchedule {
    pub fn active(&self, t: f64) -> bool {
        (t + self.phase).rem_euclid(self.period) < self.duty_cycle * self.period
    }

    pub fn covers(&self, bearing: f64) -> bool {
        wrap_angle(bearing - self.sector_center).abs() <= self.sector_width / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Seconds between frames.
    pub dt: f64,
    /// Walking speed, m/s.
    pub speed: f64,
    /// In-place turning rate at waypoints, rad/s.
    pub turn_rate: f64,
    pub odometry_noise: MotionNoise,
    pub scan_beams: usize,
    pub z_max: f64,
    pub scan_sigma: f64,
    /// Probability that a beam returns nothing (reads `z_max`).
    pub scan_dropout: f64,
    /// Rays cast to find visible shelf columns.
    pub semantic_rays: usize,
    pub recall: f64,
    pub precision: f64,
    pub range_jitter: f64,
    pub bearing_jitter: f64,
    pub occluder: Option<OccluderSchedule>,
    /// Waypoint indices reached by an instantaneous jump from the previous
    /// waypoint rather than by walking.
    pub teleport_at: Vec<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            speed: 0.5,
            turn_rate: 1.5,
            odometry_noise: MotionNoise {
                sigma_trans: 0.02,
                sigma_rot: 0.02,
                ..MotionNoise::zero()
            },
            scan_beams: 64,
            z_max: 8.0,
            scan_sigma: 0.03,
            scan_dropout: 0.01,
            semantic_rays: 48,
            recall: 0.77,
            precision: 0.91,
            range_jitter: 0.1,
            bearing_jitter: 0.03,
            occluder: None,
            teleport_at: Vec::new(),
        }
    }
}

impl SimConfig {
    /// Perfect sensors and odometry.
    pub fn noiseless() -> Self {
        Self {
            odometry_noise: MotionNoise::zero(),
            scan_sigma: 0.0,
            scan_dropout: 0.0,
            recall: 1.0,
            precision: 1.0,
            range_jitter: 0.0,
            bearing_jitter: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.speed > 0.0 && self.turn_rate > 0.0) {
            return Err(invalid("simulator", "dt, speed and turn_rate must be > 0"));
        }
        if self.scan_beams == 0 || self.semantic_rays == 0 {
            return Err(invalid("simulator", "beam and ray counts must be >= 1"));
        }
        if !(self.z_max > 0.0) {
            return Err(invalid("z_max", "must be > 0"));
        }
        for (name, p) in [
            ("recall", self.recall),
            ("precision", self.precision),
            ("scan_dropout", self.scan_dropout),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(name, "must lie in [0, 1]"));
            }
        }
        if !(self.precision > 0.0) {
            return Err(invalid("precision", "must be > 0"));
        }
        if !(self.scan_sigma >= 0.0 && self.range_jitter >= 0.0 && self.bearing_jitter >= 0.0) {
            return Err(invalid("simulator", "noise levels must be >= 0"));
        }
        if let Some(o) = &self.occluder {
            if !(o.period > 0.0 && (0.0..=1.0).contains(&o.duty_cycle) && o.range >= 0.0) {
                return Err(invalid("occluder", "need period > 0, duty in [0, 1], range >= 0"));
            }
        }
        Ok(())
    }
}

/// Experimental conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// Smooth wheeled platform.
    Cart,
    /// Body-worn camera: noisier odometry, larger heading drift.
    Wearable,
    /// A person intermittently blocks part of the view.
    Dynamic,
    /// A quarter of the products are gone.
    Sparse25,
    /// Half of the products are gone.
    Sparse50,
}

impl Condition {
    pub const ALL: [Condition; 5] = [
        Condition::Cart,
        Condition::Wearable,
        Condition::Dynamic,
        Condition::Sparse25,
        Condition::Sparse50,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Condition::Cart => "cart",
            Condition::Wearable => "wearable",
            Condition::Dynamic => "dynamic",
            Condition::Sparse25 => "sparse25",
            Condition::Sparse50 => "sparse50",
        }
    }

    pub fn apply(&self, base: &SimConfig) -> SimConfig {
        let mut c = base.clone();
        match self {
            Condition::Wearable => {
                c.odometry_noise.sigma_trans = 0.08;
                c.odometry_noise.sigma_rot = base.odometry_noise.sigma_rot * 3.0;
            }
            Condition::Dynamic => {
                c.occluder = Some(base.occluder.unwrap_or_default());
            }
            _ => {}
        }
        c
    }

    /// Fraction of products missing from the live shelves.
    pub fn remove_fraction(&self) -> f64 {
        match self {
            Condition::Sparse25 => 0.25,
            Condition::Sparse50 => 0.5,
            _ => 0.0,
        }
    }
}

/// One synchronized step of sensor data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimFrame {
    pub t: f64,
    pub true_pose: Pose,
    /// Noisy body-frame motion since the previous frame.
    pub odom: OdometryDelta,
    pub scan: BeamScan,
    pub detections: Vec<Detection>,
    pub occluded: bool,
}

/// True poses sampled every `dt` along the waypoints: turn in place toward
/// the next waypoint, then walk to it in equal steps. Returns the poses and,
/// per pose, whether it was reached by a jump.
pub fn interpolate(waypoints: &[Pose], cfg: &SimConfig) -> Result<Vec<(Pose, bool)>> {
    if waypoints.len() < 2 {
        return Err(invalid("waypoints", "need at least two"));
    }
    let heading_to = |a: &Pose, b: &Pose| (b.y - a.y).atan2(b.x - a.x);
    let mut pose = Pose::new(waypoints[0].x, waypoints[0].y, heading_to(&waypoints[0], &waypoints[1]));
    let mut out = vec![(pose, false)];
    let step_len = cfg.speed * cfg.dt;
    let turn_step = cfg.turn_rate * cfg.dt;
    for i in 1..waypoints.len() {
        let target = waypoints[i];
        if cfg.teleport_at.contains(&i) {
            let theta = waypoints
                .get(i + 1)
                .map(|n| heading_to(&target, n))
                .unwrap_or(pose.theta);
            pose = Pose::new(target.x, target.y, theta);
            out.push((pose, true));
            continue;
        }
        let dist = (target.x - pose.x).hypot(target.y - pose.y);
        if dist < 1e-9 {
            continue;
        }
        let turn = wrap_angle(heading_to(&pose, &target) - pose.theta);
        let n_turn = (turn.abs() / turn_step).ceil() as usize;
        let theta0 = pose.theta;
        for k in 1..=n_turn {
            pose = Pose::new(pose.x, pose.y, theta0 + turn * k as f64 / n_turn as f64);
            out.push((pose, false));
        }
        let n_walk = (dist / step_len).ceil().max(1.0) as usize;
        let (x0, y0) = pose.position();
        for k in 1..=n_walk {
            let f = k as f64 / n_walk as f64;
            pose = Pose::new(x0 + f * (target.x - x0), y0 + f * (target.y - y0), pose.theta);
            out.push((pose, false));
        }
    }
    Ok(out)
}

/// Renders noisy frames along a trajectory through `waypoints`.
///
/// `sem` is the live shelf state the camera sees, which may differ from the
/// map the filter localizes against.
pub fn simulate_trajectory(
    occ: &OccupancyGrid,
    sem: &SemanticVoxelGrid,
    cam: &CameraModel,
    waypoints: &[Pose],
    cfg: &SimConfig,
    seed: u64,
) -> Result<Vec<SimFrame>> {
    cfg.validate()?;
    for w in waypoints {
        if !occ.is_free_at(w.x, w.y) {
            return Err(Error::OutsideGrid { x: w.x, y: w.y });
        }
    }
    let truth = interpolate(waypoints, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bearings = fov_bearings(cam.fov, cfg.scan_beams);
    let half_fov = cam.fov / 2.0;
    let num_classes = sem.num_classes();
    let fp_rate = (1.0 - cfg.precision) / cfg.precision;

    let mut frames = Vec::with_capacity(truth.len());
    for (k, &(pose, jumped)) in truth.iter().enumerate() {
        let t = k as f64 * cfg.dt;
        let odom = if k == 0 || jumped {
            OdometryDelta::default()
        } else {
            let d = OdometryDelta::between(&truth[k - 1].0, &pose);
            let (sxy, sth) = cfg.odometry_noise.sigmas(&d);
            let ex: f64 = rng.sample(StandardNormal);
            let ey: f64 = rng.sample(StandardNormal);
            let et: f64 = rng.sample(StandardNormal);
            OdometryDelta::new(d.dx + sxy * ex, d.dy + sxy * ey, d.dtheta + sth * et)
        };
        let occluder = cfg.occluder.filter(|o| o.active(t));

        let mut ranges = Vec::with_capacity(bearings.len());
        for &b in &bearings {
            let truth_range = occ.cast(pose.position(), pose.theta + b, cfg.z_max)?;
            let e: f64 = rng.sample(StandardNormal);
            let drop = rng.random::<f64>() < cfg.scan_dropout;
            let mut r = if drop {
                cfg.z_max
            } else {
                (truth_range + cfg.scan_sigma * e).clamp(0.0, cfg.z_max)
            };
            if let Some(o) = occluder {
                if o.covers(b) {
                    r = r.min(o.range);
                }
            }
            ranges.push(r);
        }
        let scan = BeamScan::new(bearings.clone(), ranges, cfg.z_max)?;

        let mut detections = Vec::new();
        for col in visible_columns(occ, sem, &pose, cam.fov, cam.max_range, cfg.semantic_rays)? {
            for (class, &n) in col.counts.iter().enumerate() {
                for _ in 0..n {
                    let hit = rng.random::<f64>() < cfg.recall;
                    let er: f64 = rng.sample(StandardNormal);
                    let eb: f64 = rng.sample(StandardNormal);
                    let fp = rng.random::<f64>() < fp_rate;
                    if hit {
                        detections.push(Detection {
                            class,
                            range: (col.range + cfg.range_jitter * er).max(0.05),
                            bearing: (col.bearing + cfg.bearing_jitter * eb).clamp(-half_fov, half_fov),
                        });
                        if fp {
                            detections.push(Detection {
                                class: rng.random_range(0..num_classes),
                                range: rng.random_range(0.3..cam.max_range),
                                bearing: rng.random_range(-half_fov..=half_fov),
                            });
                        }
                    }
                }
            }
        }
        if let Some(o) = occluder {
            detections.retain(|d| !o.covers(d.bearing));
        }
        frames.push(SimFrame {
            t,
            true_pose: pose,
            odom,
            scan,
            detections,
            occluded: occluder.is_some(),
        });
    }
    Ok(frames)
}

pub fn write_frames(path: impl AsRef<Path>, frames: &[SimFrame]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for f in frames {
        serde_json::to_writer(&mut w, f)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_frames(path: impl AsRef<Path>) -> Result<Vec<SimFrame>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Uniformly random heading, for scripted starts.
pub fn random_heading<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(-PI..PI)
}
