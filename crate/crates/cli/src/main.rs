//! `semloc`: simulate runs, build view banks, localize logs and benchmark.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use semloc::bank::SemanticViewBank;
use semloc::eval::{
    run_experiment, run_filter, sequence_route, write_estimates, write_outputs, Method, PreparedWorld, Report,
    RunConfig, Summary, TrialResult,
};
use semloc::sim::{build_world, perturb_world, read_frames, simulate_trajectory, write_frames, Condition};
use semloc::world::io::{load_map, save_map};
use semloc::world::DistanceField;
use serde_json::{Map, Value};

#[derive(Parser)]
#[command(name = "semloc", version, about = "Semantic Monte Carlo localization toolkit")]
struct Cli {
    /// Run configuration (JSON); defaults apply to missing sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set experiment.trials=3`; the value
    /// is parsed as JSON, falling back to a plain string. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the configured world and record one simulated run.
    Simulate {
        /// Where to write the (pre-drift) map.
        #[arg(long)]
        map: PathBuf,
        /// Where to write the frame log (JSON lines).
        #[arg(long)]
        frames: PathBuf,
        #[arg(long, default_value = "cart", value_parser = parse_condition)]
        condition: Condition,
        #[arg(long, default_value_t = 0)]
        sequence: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Precompute the semantic view bank of a map.
    Precompute {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the filter over a recorded frame log.
    Localize {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        /// Where to write per-step estimates (JSON lines).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "semantic", value_parser = parse_method)]
        method: Method,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the configured experiment and write report, tables and logs.
    Evaluate {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run the experiment and check it against the acceptance targets.
    Benchmark {
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn parse_condition(s: &str) -> Result<Condition, String> {
    Condition::ALL
        .into_iter()
        .find(|c| c.name() == s)
        .ok_or_else(|| format!("unknown condition `{s}`"))
}

fn parse_method(s: &str) -> Result<Method, String> {
    [Method::Semantic, Method::DepthOnly]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| format!("unknown method `{s}`"))
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut value = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => Value::Object(Map::new()),
    };
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let cfg: RunConfig = serde_json::from_value(value).context("invalid config")?;
    cfg.validate().context("invalid config")?;
    Ok(cfg)
}

/// Sets `a.b.c=value` inside a JSON object tree, creating missing levels.
fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .with_context(|| format!("override `{assignment}` is not KEY=VALUE"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            bail!("override key `{key}` has an empty component");
        }
        let obj = match node {
            Value::Object(m) => m,
            _ => bail!("override key `{key}`: `{part}` is not inside an object"),
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = load_config(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::Simulate {
            map,
            frames,
            condition,
            sequence,
            seed,
        } => {
            let (occ, sem) = build_world(&cfg.world)?;
            let e = &cfg.experiment;
            let live = perturb_world(&sem, condition.remove_fraction(), e.map_drift, e.seed ^ 0x11)?;
            let route = sequence_route(&cfg.world, e.seed, sequence, e.legs);
            let sim = condition.apply(&cfg.simulator);
            let log = simulate_trajectory(&occ, &live, &e.camera, &route, &sim, seed)?;
            save_map(&map, &occ, &sem)?;
            write_frames(&frames, &log)?;
            println!("wrote {} frames ({:.1} s) and map", log.len(), log.last().map_or(0.0, |f| f.t));
        }
        Command::Precompute { map, out } => {
            let (occ, sem) = load_map(&map)?;
            let field = DistanceField::new(&occ);
            let bank = SemanticViewBank::precompute(&field, &sem, &cfg.experiment.camera, &cfg.experiment.bank)?;
            bank.save(&out)?;
            println!("bank: {} poses, {} classes", bank.len(), bank.num_classes());
        }
        Command::Localize {
            map,
            bank,
            frames,
            out,
            method,
            seed,
        } => {
            let (occ, sem) = load_map(&map)?;
            let bank = SemanticViewBank::load(&bank).context("loading bank")?;
            let world = PreparedWorld::with_bank(occ, sem, &cfg.experiment.camera, bank)?;
            let frames = read_frames(&frames)?;
            let fc = method.configure(&cfg.filter_config());
            let log = run_filter(&world, &frames, &fc, cfg.experiment.init, seed)?;
            write_estimates(&out, &log)?;
            let r = TrialResult::score(Condition::Cart, method, 0, 0, log, &cfg.thresholds, 0.0)?;
            println!(
                "steps {} converged {} success {} conv_time {} ate {}",
                r.steps,
                r.converged,
                r.success,
                fmt_opt(r.convergence_time),
                fmt_opt(r.ate_trans)
            );
        }
        Command::Evaluate { out_dir } => {
            let report = run_experiment(&cfg)?;
            write_outputs(&report, &out_dir)?;
            print_summaries(&report.summaries);
            println!("{:.1} filter steps/s", report.steps_per_second);
        }
        Command::Benchmark { out_dir } => {
            let report = run_experiment(&cfg)?;
            if let Some(dir) = out_dir {
                write_outputs(&report, &dir)?;
            }
            print_summaries(&report.summaries);
            let checks = benchmark_checks(&report);
            for (name, ok, detail) in &checks {
                println!("{} {name}: {detail}", if *ok { "PASS" } else { "FAIL" });
            }
            if checks.iter().any(|c| !c.1) {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.3}"))
}

fn print_summaries(s: &[Summary]) {
    for s in s {
        println!(
            "{:<9} {:<10} success {:>3}/{:<3} ({:5.1}%) conv {:>7} s ate {:>7} m",
            s.condition.name(),
            s.method.name(),
            s.successes,
            s.trials,
            100.0 * s.success_rate,
            fmt_opt(s.mean_convergence_time),
            fmt_opt(s.mean_ate_trans)
        );
    }
}

fn rate(report: &Report, c: Condition, m: Method) -> Option<f64> {
    report
        .summaries
        .iter()
        .find(|s| s.condition == c && s.method == m)
        .map(|s| s.success_rate)
}

/// Success-rate targets for every condition present in the report, plus
/// filter throughput.
fn benchmark_checks(report: &Report) -> Vec<(String, bool, String)> {
    let mut out = Vec::new();
    let pct = |v: Option<f64>| v.map_or("missing".to_string(), |x| format!("{:.1}%", 100.0 * x));
    let cart_sem = rate(report, Condition::Cart, Method::Semantic);
    let cart_depth = rate(report, Condition::Cart, Method::DepthOnly);
    out.push((
        "cart semantic >= 90%".into(),
        cart_sem.is_some_and(|r| r >= 0.9),
        pct(cart_sem),
    ));
    out.push((
        "cart depth-only <= 60%".into(),
        cart_depth.is_some_and(|r| r <= 0.6),
        pct(cart_depth),
    ));
    if let (Some(s25), Some(base)) = (rate(report, Condition::Sparse25, Method::Semantic), cart_sem) {
        out.push((
            "sparse25 within 10 points of cart".into(),
            base - s25 <= 0.10 + 1e-9,
            format!("{} vs {}", pct(Some(s25)), pct(Some(base))),
        ));
    }
    if let (Some(s50), Some(d)) = (rate(report, Condition::Sparse50, Method::Semantic), cart_depth) {
        out.push((
            "sparse50 >= cart depth-only".into(),
            s50 >= d,
            format!("{} vs {}", pct(Some(s50)), pct(Some(d))),
        ));
    }
    out.push((
        "throughput >= 2 steps/s".into(),
        report.steps_per_second >= 2.0,
        format!("{:.1} steps/s", report.steps_per_second),
    ));
    out
}
