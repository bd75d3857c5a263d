//! Convergence and trajectory-error metrics, and the experiment runner.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::{PoseGridSpec, SemanticViewBank};
use crate::depth::BeamModelParams;
use crate::error::{invalid, Error, Result};
use crate::filter::{init_global, step, FilterConfig, FilterMaps, StepDiagnostics};
use crate::semantic::{build_semantic_vector, SimilarityWeights};
use crate::sim::{build_world, perturb_world, simulate_trajectory, Condition, SimConfig, SimFrame, WorldSpec};
use crate::world::{CameraModel, DistanceField, OccupancyGrid, Pose, SemanticVoxelGrid};

/// Start time of the final run of samples that all lie within both
/// thresholds of the ground truth; `None` if the last sample does not.
pub fn detect_convergence(
    est: &[(f64, Pose)],
    gt: &[(f64, Pose)],
    conv_trans: f64,
    conv_rot: f64,
) -> Result<Option<f64>> {
    if est.len() != gt.len() {
        return Err(Error::LengthMismatch(format!(
            "{} estimates vs {} ground-truth poses",
            est.len(),
            gt.len()
        )));
    }
    let within = |i: usize| est[i].1.distance(&gt[i].1) <= conv_trans && est[i].1.angle_error(&gt[i].1) <= conv_rot;
    let mut start = None;
    for i in (0..est.len()).rev() {
        if !within(i) {
            break;
        }
        start = Some(est[i].0);
    }
    Ok(start)
}

/// A trial succeeds when it converges within the first 95% of the run.
pub fn trial_success(conv_time: Option<f64>, duration: f64) -> bool {
    matches!(conv_time, Some(t) if t <= 0.95 * duration)
}

/// RMS position and heading error over samples with `t >= from_time`.
pub fn ate_rmse(est: &[(f64, Pose)], gt: &[(f64, Pose)], from_time: f64) -> Result<(f64, f64)> {
    if est.len() != gt.len() {
        return Err(Error::LengthMismatch(format!(
            "{} estimates vs {} ground-truth poses",
            est.len(),
            gt.len()
        )));
    }
    let (mut st, mut sr, mut n) = (0.0, 0.0, 0usize);
    for (e, g) in est.iter().zip(gt) {
        if e.0 >= from_time {
            st += e.1.distance(&g.1).powi(2);
            sr += e.1.angle_error(&g.1).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyWindow(format!("no samples at or after t = {from_time}")));
    }
    Ok(((st / n as f64).sqrt(), (sr / n as f64).sqrt()))
}

/// How the particles are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Global,
    /// Gaussian around the true start pose.
    AroundTruth { sigma_xy: f64, sigma_theta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Semantic,
    DepthOnly,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Semantic => "semantic",
            Method::DepthOnly => "depth_only",
        }
    }

    pub fn configure(&self, cfg: &FilterConfig) -> FilterConfig {
        match self {
            Method::Semantic => *cfg,
            Method::DepthOnly => cfg.depth_only(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub conv_trans: f64,
    pub conv_rot: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            conv_trans: 0.4,
            conv_rot: std::f64::consts::FRAC_PI_4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub conditions: Vec<Condition>,
    pub methods: Vec<Method>,
    pub sequences: usize,
    pub trials: usize,
    pub seed: u64,
    /// Aisle traversals per route.
    pub legs: usize,
    pub init: InitMode,
    /// Share of items moved between mapping and the live run.
    pub map_drift: f64,
    pub bank: PoseGridSpec,
    pub camera: CameraModel,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            conditions: vec![Condition::Cart],
            methods: vec![Method::Semantic, Method::DepthOnly],
            sequences: 10,
            trials: 5,
            seed: 1,
            legs: 2,
            init: InitMode::Global,
            map_drift: 0.2,
            bank: PoseGridSpec::default(),
            camera: CameraModel::default(),
        }
    }
}

/// Full experiment description; each field is one section of the config
/// file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub world: WorldSpec,
    pub simulator: SimConfig,
    pub filter: FilterConfig,
    pub beam_model: BeamModelParams,
    pub similarity: SimilarityWeights,
    pub thresholds: Thresholds,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let filter = FilterConfig::default();
        Self {
            world: WorldSpec::default(),
            simulator: SimConfig::default(),
            beam_model: filter.beam,
            similarity: filter.similarity,
            filter,
            thresholds: Thresholds::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Filter settings with the beam-model and similarity sections applied.
    pub fn filter_config(&self) -> FilterConfig {
        FilterConfig {
            beam: self.beam_model,
            similarity: self.similarity,
            ..self.filter
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.simulator.validate()?;
        self.filter_config().validate()?;
        self.experiment.bank.validate()?;
        self.experiment.camera.validate()?;
        if self.beam_model.z_max != self.simulator.z_max {
            return Err(invalid("beam_model.z_max", "must equal simulator.z_max"));
        }
        let e = &self.experiment;
        if e.conditions.is_empty() || e.methods.is_empty() || e.sequences == 0 || e.trials == 0 {
            return Err(invalid("experiment", "needs conditions, methods, sequences and trials"));
        }
        if !(0.0..=1.0).contains(&e.map_drift) {
            return Err(invalid("experiment.map_drift", "must lie in [0, 1]"));
        }
        if !(self.thresholds.conv_trans > 0.0 && self.thresholds.conv_rot > 0.0) {
            return Err(invalid("thresholds", "must be > 0"));
        }
        Ok(())
    }
}

/// One logged filter step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub t: f64,
    pub estimate: Pose,
    pub truth: Pose,
    pub diagnostics: StepDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub condition: Condition,
    pub method: Method,
    pub sequence: usize,
    pub trial: usize,
    pub converged: bool,
    pub success: bool,
    pub convergence_time: Option<f64>,
    pub ate_trans: Option<f64>,
    pub ate_rot: Option<f64>,
    pub duration: f64,
    pub steps: usize,
    pub elapsed_s: f64,
    #[serde(skip)]
    pub log: Vec<EstimateRecord>,
}

impl TrialResult {
    /// Scores an estimate log against its ground truth.
    pub fn score(
        condition: Condition,
        method: Method,
        sequence: usize,
        trial: usize,
        log: Vec<EstimateRecord>,
        thresholds: &Thresholds,
        elapsed_s: f64,
    ) -> Result<Self> {
        let est: Vec<(f64, Pose)> = log.iter().map(|r| (r.t, r.estimate)).collect();
        let gt: Vec<(f64, Pose)> = log.iter().map(|r| (r.t, r.truth)).collect();
        let duration = log.last().map_or(0.0, |r| r.t);
        let conv = detect_convergence(&est, &gt, thresholds.conv_trans, thresholds.conv_rot)?;
        let (ate_trans, ate_rot) = match conv {
            Some(t) => {
                let (a, b) = ate_rmse(&est, &gt, t)?;
                (Some(a), Some(b))
            }
            None => (None, None),
        };
        Ok(Self {
            condition,
            method,
            sequence,
            trial,
            converged: conv.is_some(),
            success: trial_success(conv, duration),
            convergence_time: conv,
            ate_trans,
            ate_rot,
            duration,
            steps: log.len(),
            elapsed_s,
            log,
        })
    }
}

/// Map layers and bank shared by every trial of a world.
pub struct PreparedWorld {
    pub occ: OccupancyGrid,
    pub field: DistanceField,
    pub sem: SemanticVoxelGrid,
    pub cam: CameraModel,
    pub bank: SemanticViewBank,
}

impl PreparedWorld {
    pub fn build(world: &WorldSpec, cam: &CameraModel, bank: &PoseGridSpec) -> Result<Self> {
        let (occ, sem) = build_world(world)?;
        Self::from_maps(occ, sem, cam, bank)
    }

    pub fn from_maps(occ: OccupancyGrid, sem: SemanticVoxelGrid, cam: &CameraModel, bank: &PoseGridSpec) -> Result<Self> {
        let field = DistanceField::new(&occ);
        let bank = SemanticViewBank::precompute(&field, &sem, cam, bank)?;
        Ok(Self {
            occ,
            field,
            sem,
            cam: *cam,
            bank,
        })
    }

    /// Pairs maps with a bank built elsewhere, checking that they agree.
    pub fn with_bank(occ: OccupancyGrid, sem: SemanticVoxelGrid, cam: &CameraModel, bank: SemanticViewBank) -> Result<Self> {
        if bank.num_classes() != sem.num_classes() {
            return Err(Error::MapMismatch(format!(
                "bank has {} classes, map has {}",
                bank.num_classes(),
                sem.num_classes()
            )));
        }
        bank.check_free(&occ)?;
        Ok(Self {
            field: DistanceField::new(&occ),
            occ,
            sem,
            cam: *cam,
            bank,
        })
    }

    pub fn maps(&self) -> FilterMaps<'_> {
        FilterMaps {
            caster: &self.field,
            sem: &self.sem,
            cam: &self.cam,
            bank: &self.bank,
        }
    }
}

/// Replays frames through the filter from the given initialization.
pub fn run_filter(
    world: &PreparedWorld,
    frames: &[SimFrame],
    cfg: &FilterConfig,
    init: InitMode,
    seed: u64,
) -> Result<Vec<EstimateRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = frames.first().ok_or_else(|| invalid("frames", "need at least one"))?;
    let mut particles = match init {
        InitMode::Global => init_global(&world.occ, cfg.n_particles, &mut rng)?,
        InitMode::AroundTruth { sigma_xy, sigma_theta } => crate::filter::init_around(
            &world.occ,
            &first.true_pose,
            sigma_xy,
            sigma_theta,
            cfg.n_particles,
            &mut rng,
        )?,
    };
    let maps = world.maps();
    let c = world.sem.num_classes();
    frames
        .iter()
        .map(|f| {
            let z = build_semantic_vector(&f.detections, c)?;
            let (estimate, diagnostics) = step(&mut particles, &f.odom, &f.scan, &z, &maps, cfg, &mut rng)?;
            Ok(EstimateRecord {
                t: f.t,
                estimate,
                truth: f.true_pose,
                diagnostics,
            })
        })
        .collect()
}

/// Aggregate over the trials of one condition and method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub condition: Condition,
    pub method: Method,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_convergence_time: Option<f64>,
    pub mean_ate_trans: Option<f64>,
    pub mean_ate_rot: Option<f64>,
    /// Sequences in which every trial succeeded.
    pub stable_sequences: Vec<usize>,
}

pub fn summarize(results: &[TrialResult]) -> Vec<Summary> {
    let mut groups: BTreeMap<(usize, Method), Vec<&TrialResult>> = BTreeMap::new();
    let order = |c: Condition| Condition::ALL.iter().position(|x| *x == c).unwrap_or(usize::MAX);
    for r in results {
        groups.entry((order(r.condition), r.method)).or_default().push(r);
    }
    groups
        .into_values()
        .map(|rs| {
            let ok: Vec<&&TrialResult> = rs.iter().filter(|r| r.success).collect();
            let mean = |f: &dyn Fn(&TrialResult) -> Option<f64>| {
                let v: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            };
            let mut by_seq: BTreeMap<usize, bool> = BTreeMap::new();
            for r in &rs {
                *by_seq.entry(r.sequence).or_insert(true) &= r.success;
            }
            Summary {
                condition: rs[0].condition,
                method: rs[0].method,
                trials: rs.len(),
                successes: ok.len(),
                success_rate: ok.len() as f64 / rs.len() as f64,
                mean_convergence_time: mean(&|r| r.convergence_time),
                mean_ate_trans: mean(&|r| r.ate_trans),
                mean_ate_rot: mean(&|r| r.ate_rot),
                stable_sequences: by_seq.into_iter().filter(|(_, s)| *s).map(|(k, _)| k).collect(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: RunConfig,
    pub summaries: Vec<Summary>,
    pub trials: Vec<TrialResult>,
    pub total_steps: usize,
    pub steps_per_second: f64,
}

/// Seeds of one trial: simulator and filter.
fn trial_seeds(base: u64, condition: Condition, sequence: usize, trial: usize) -> (u64, u64) {
    let c = Condition::ALL.iter().position(|x| *x == condition).unwrap_or(0) as u64;
    let key = base
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(c << 40)
        .wrapping_add((sequence as u64) << 20)
        .wrapping_add(trial as u64);
    let mut r = ChaCha8Rng::seed_from_u64(key);
    (r.random(), r.random())
}

/// Waypoints of sequence `s`: a tour from a seeded start.
pub fn sequence_route(world: &WorldSpec, seed: u64, sequence: usize, legs: usize) -> Vec<Pose> {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ (0xa5a5_0000 + sequence as u64));
    let layout = world.layout();
    let aisle = sequence % world.n_aisles;
    let frac = r.random_range(0.2..0.8);
    let east = r.random::<bool>();
    layout.aisle_tour(aisle, frac, east, legs)
}

/// Runs every condition x sequence x trial x method and scores the logs.
pub fn run_experiment(cfg: &RunConfig) -> Result<Report> {
    cfg.validate()?;
    let e = &cfg.experiment;
    let world = PreparedWorld::build(&cfg.world, &e.camera, &e.bank)?;
    run_experiment_on(cfg, &world)
}

/// As [`run_experiment`], reusing an already prepared world.
pub fn run_experiment_on(cfg: &RunConfig, world: &PreparedWorld) -> Result<Report> {
    let e = &cfg.experiment;
    let base_filter = cfg.filter_config();
    let mut jobs = Vec::new();
    for &condition in &e.conditions {
        let live = perturb_world(&world.sem, condition.remove_fraction(), e.map_drift, e.seed ^ 0x11)?;
        let sim = condition.apply(&cfg.simulator);
        for sequence in 0..e.sequences {
            let route = sequence_route(&cfg.world, e.seed, sequence, e.legs);
            for trial in 0..e.trials {
                jobs.push((condition, live.clone(), sim.clone(), sequence, route.clone(), trial));
            }
        }
    }
    let start = Instant::now();
    let per_job = jobs
        .par_iter()
        .map(|(condition, live, sim, sequence, route, trial)| {
            let (sim_seed, filter_seed) = trial_seeds(e.seed, *condition, *sequence, *trial);
            let frames = simulate_trajectory(&world.occ, live, &world.cam, route, sim, sim_seed)?;
            let mut filter = base_filter;
            filter.motion.sigma_trans = filter.motion.sigma_trans.max(sim.odometry_noise.sigma_trans);
            filter.motion.sigma_rot = filter.motion.sigma_rot.max(sim.odometry_noise.sigma_rot);
            e.methods
                .iter()
                .map(|m| {
                    let t0 = Instant::now();
                    let log = run_filter(world, &frames, &m.configure(&filter), e.init, filter_seed)?;
                    let elapsed = t0.elapsed().as_secs_f64();
                    TrialResult::score(*condition, *m, *sequence, *trial, log, &cfg.thresholds, elapsed)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let wall = start.elapsed().as_secs_f64();
    let trials: Vec<TrialResult> = per_job.into_iter().flatten().collect();
    let total_steps: usize = trials.iter().map(|t| t.steps).sum();
    let filter_time: f64 = trials.iter().map(|t| t.elapsed_s).sum();
    let _ = wall;
    Ok(Report {
        config: cfg.clone(),
        summaries: summarize(&trials),
        steps_per_second: if filter_time > 0.0 { total_steps as f64 / filter_time } else { 0.0 },
        total_steps,
        trials,
    })
}

/// Writes `report.json`, one CSV per method and per-trial estimate logs
/// under `dir`. The primary method's table is `results.csv`; others are
/// `results_<method>.csv`.
pub fn write_outputs(report: &Report, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("estimates"))?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    let methods: Vec<Method> = report.config.experiment.methods.clone();
    for (i, m) in methods.iter().enumerate() {
        let name = if i == 0 {
            "results.csv".to_string()
        } else {
            format!("results_{}.csv", m.name())
        };
        let mut w = BufWriter::new(File::create(dir.join(name))?);
        writeln!(w, "condition,sequence,trial,success,conv_time_s,ate_m,ate_rad")?;
        for t in report.trials.iter().filter(|t| t.method == *m) {
            let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                t.condition.name(),
                t.sequence,
                t.trial,
                t.success,
                opt(t.convergence_time),
                opt(t.ate_trans),
                opt(t.ate_rot)
            )?;
        }
        w.flush()?;
    }
    for t in &report.trials {
        let name = format!(
            "{}_{}_s{:02}_t{:02}.jsonl",
            t.condition.name(),
            t.method.name(),
            t.sequence,
            t.trial
        );
        write_estimates(dir.join("estimates").join(name), &t.log)?;
    }
    Ok(())
}

pub fn write_estimates(path: impl AsRef<Path>, log: &[EstimateRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in log {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
