//! Experiment orchestration behind the `impulsive-lab` binary.
//!
//! Every subcommand loads a system (builtin name or JSON configuration),
//! runs one library operation, and writes its outputs plus a
//! `manifest.json` into the output directory (`--out`, else the
//! `IMPULSIVE_LAB_OUT` environment variable, else `lab-out`). JSON outputs
//! carry `schema_version`, `config_hash` and `seed`.
//!
//! Exit codes: 0 success, 2 validation or configuration failure, 3 numerical
//! failure, 4 budget exhausted, 1 I/O failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::builtin::{s3_paper_chain, s3_true_chain};
use crate::config::{emit_config, load, SystemConfig, SCHEMA_VERSION};
use crate::global::{densify, recurrent_proxy, shadowing_falsifier, DensifyOptions, DensifyStatus, PseudoOrbit, Region};
use crate::index::{fixed_point_index, ReturnChartMap};
use crate::perturb::{
    attractify, attractify_impulse, closing_field, closing_impulse, contraction_margin, index_radius, permanence_test,
    ClosingOptions, Construction, FieldClosingOptions, Mode, PermanenceOptions, Trials,
};
use crate::poincare::{find_periodic_orbit, periodic_orbits_up_to, poincare_iterate, OrbitSearch, PeriodicOrbit};
use crate::semiflow::{impulsive_times, impulsive_trajectory, write_csv};
use crate::system::{validate_system, ImpulsiveSystem};
use crate::{parse_point, Error, Point, Result};

pub const OUT_ENV: &str = "IMPULSIVE_LAB_OUT";

/// Sub-seed scheme recorded in every manifest.
pub const SEED_SCHEME: &str =
    "stream k of master m: splitmix64(splitmix64(m) xor k*0xd6e8feb86659fd93), seeding ChaCha8; \
     densify draws stream = iteration, permanence draws stream = trial";

#[derive(Debug, Parser)]
#[command(name = "impulsive-lab", version, about = "Experiments on impulsive semiflows")]
pub struct Cli {
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed; overrides the configuration's.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct OrbitArgs {
    /// Point on D̂ near the orbit.
    #[arg(long, value_parser = point_arg)]
    pub y: Point,
    /// Returns to D̂ per period.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the standing hypotheses.
    Validate {
        system: String,
        #[arg(long, default_value_t = 21)]
        samples: usize,
    },
    /// Export an impulsive trajectory as CSV.
    Simulate {
        system: String,
        #[arg(long, value_parser = point_arg)]
        x0: Point,
        #[arg(long)]
        t: f64,
    },
    /// First hitting time of D by the flow.
    Hit {
        system: String,
        #[arg(long, value_parser = point_arg)]
        x0: Point,
        #[arg(long)]
        t_max: Option<f64>,
    },
    /// Iterate the Poincaré map on D̂, optionally searching a k-periodic point.
    Poincare {
        system: String,
        #[arg(long, value_parser = point_arg)]
        y: Point,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long)]
        find: bool,
    },
    /// Periodic orbits up to a period bound.
    Orbits {
        system: String,
        #[arg(long, default_value_t = 20.0)]
        t_bound: f64,
        #[arg(long, default_value_t = 16)]
        grid: usize,
    },
    /// Fixed-point index of a periodic orbit.
    Index {
        system: String,
        #[command(flatten)]
        orbit: OrbitArgs,
        #[arg(long, default_value_t = 0.05)]
        radius: f64,
    },
    /// Closing perturbation at a target point.
    Close {
        system: String,
        #[arg(long, value_parser = point_arg)]
        target: Point,
        #[arg(long, default_value = "impulse", value_parser = mode_arg)]
        mode: Mode,
        #[arg(long)]
        eps: f64,
        /// Recurrence budget (impulse mode).
        #[arg(long, default_value_t = 400)]
        budget: usize,
    },
    /// Make a periodic orbit attracting.
    Attract {
        system: String,
        #[command(flatten)]
        orbit: OrbitArgs,
        #[arg(long, default_value = "field", value_parser = mode_arg)]
        mode: Mode,
        #[arg(long)]
        eta: f64,
    },
    /// Random perturbation trials around a periodic orbit.
    Permanence {
        system: String,
        #[command(flatten)]
        orbit: OrbitArgs,
        #[arg(long, default_value = "field", value_parser = mode_arg)]
        mode: Mode,
        /// Attractify with this η first.
        #[arg(long)]
        attract: Option<f64>,
        /// Trial size; defaults to 0.1 times the contraction margin.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
    /// Recurrent-set proxy on a region.
    Proxy {
        system: String,
        /// `patch`, `box:x0,y0,z0:x1,y1,z1` or `annulus:r_in,r_out,z_lo,z_hi`.
        #[arg(long, default_value = "patch", value_parser = region_arg)]
        region: Region,
        #[arg(long, default_value_t = 0.05)]
        eps_grid: f64,
        #[arg(long, default_value_t = 1.0)]
        t_min: f64,
        #[arg(long, default_value_t = 20.0)]
        t_max: f64,
        #[arg(long, default_value_t = 1)]
        samples: usize,
    },
    /// Close and attractify until periodic orbits are ε-dense.
    Densify {
        system: String,
        #[arg(long, value_parser = mode_arg)]
        mode: Mode,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        budget: usize,
    },
    /// Search a trajectory shadowing a pseudo-orbit.
    Shadow {
        system: String,
        /// The two-link S3 chain that skips an impulse.
        #[arg(long, conflicts_with = "true_chain")]
        paper_chain: bool,
        /// Two links of a true S3 trajectory.
        #[arg(long)]
        true_chain: bool,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 10_000)]
        candidates: usize,
        #[arg(long, default_value_t = 8)]
        breakpoints: usize,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate { .. } => "validate",
            Command::Simulate { .. } => "simulate",
            Command::Hit { .. } => "hit",
            Command::Poincare { .. } => "poincare",
            Command::Orbits { .. } => "orbits",
            Command::Index { .. } => "index",
            Command::Close { .. } => "close",
            Command::Attract { .. } => "attract",
            Command::Permanence { .. } => "permanence",
            Command::Proxy { .. } => "proxy",
            Command::Densify { .. } => "densify",
            Command::Shadow { .. } => "shadow",
        }
    }

    fn system(&self) -> &str {
        match self {
            Command::Validate { system, .. }
            | Command::Simulate { system, .. }
            | Command::Hit { system, .. }
            | Command::Poincare { system, .. }
            | Command::Orbits { system, .. }
            | Command::Index { system, .. }
            | Command::Close { system, .. }
            | Command::Attract { system, .. }
            | Command::Permanence { system, .. }
            | Command::Proxy { system, .. }
            | Command::Densify { system, .. }
            | Command::Shadow { system, .. } => system,
        }
    }
}

fn point_arg(s: &str) -> std::result::Result<Point, String> {
    parse_point(s).ok_or_else(|| format!("expected `x,y,z`, got `{s}`"))
}

fn mode_arg(s: &str) -> std::result::Result<Mode, String> {
    s.parse::<Mode>().map_err(|e| e.to_string())
}

fn floats(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect()
}

fn region_arg(s: &str) -> std::result::Result<Region, String> {
    let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
    match kind {
        "patch" => Ok(Region::Patch),
        "box" => {
            let (a, b) = rest.split_once(':').ok_or("box needs `lo:hi`")?;
            Ok(Region::Box {
                lo: point_arg(a)?,
                hi: point_arg(b)?,
            })
        }
        "annulus" => match floats(rest)?.as_slice() {
            [r_inner, r_outer, z_lo, z_hi] => Ok(Region::Annulus {
                center: Point::zeros(),
                r_inner: *r_inner,
                r_outer: *r_outer,
                z_lo: *z_lo,
                z_hi: *z_hi,
            }),
            _ => Err("annulus needs `r_in,r_out,z_lo,z_hi`".into()),
        },
        other => Err(format!("unknown region `{other}`")),
    }
}

/// Summary of one invocation; written as `manifest.json`.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub schema_version: u32,
    pub command: String,
    pub system: String,
    pub config_hash: String,
    pub seed: u64,
    pub seed_scheme: &'static str,
    pub outputs: Vec<String>,
    pub wall_time_s: f64,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Exit code of a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidSystem(_)
        | Error::InvalidParameter(_)
        | Error::Config(_)
        | Error::UnknownSystem(_)
        | Error::OutsidePatch { .. }
        | Error::DimensionUnsupported(_) => 2,
        Error::Io(_) => 1,
        _ => 3,
    }
}

/// Output directory: the flag, else the environment override, else `lab-out`.
pub fn output_dir(flag: Option<&Path>) -> PathBuf {
    match flag {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("lab-out")),
    }
}

struct Ctx {
    dir: PathBuf,
    hash: String,
    seed: u64,
    outputs: Vec<String>,
}

impl Ctx {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    /// Writes `{schema_version, config_hash, seed, result}`.
    fn json(&mut self, name: &str, result: impl Serialize) -> Result<()> {
        let doc = json!({
            "schema_version": SCHEMA_VERSION,
            "config_hash": self.hash,
            "seed": self.seed,
            "result": serde_json::to_value(result).map_err(|e| Error::Io(e.to_string()))?,
        });
        let mut text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Io(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn config(&mut self, name: &str, cfg: &SystemConfig) -> Result<()> {
        self.write(name, emit_config(cfg).as_bytes())
    }
}

/// Runs one command and writes its manifest. The returned result's
/// `exit_code` is the process exit status.
pub fn run(cli: &Cli) -> ExperimentResult {
    let start = Instant::now();
    let command = cli.command.name().to_string();
    let system = cli.command.system().to_string();
    let dir = output_dir(cli.out.as_deref());
    let mut result = ExperimentResult {
        schema_version: SCHEMA_VERSION,
        command,
        system,
        config_hash: String::new(),
        seed: 0,
        seed_scheme: SEED_SCHEME,
        outputs: Vec::new(),
        wall_time_s: 0.0,
        exit_code: 0,
        error: None,
    };
    let outcome = load(cli.command.system(), cli.seed).and_then(|cfg| {
        result.config_hash = cfg.hash();
        result.seed = cfg.seed;
        fs::create_dir_all(&dir)?;
        let mut ctx = Ctx {
            dir: dir.clone(),
            hash: result.config_hash.clone(),
            seed: cfg.seed,
            outputs: Vec::new(),
        };
        let code = dispatch(&cli.command, &cfg, &mut ctx);
        result.outputs = ctx.outputs;
        code
    });
    match outcome {
        Ok(code) => result.exit_code = code,
        Err(e) => {
            result.exit_code = exit_code(&e);
            result.error = Some(e.to_string());
        }
    }
    result.wall_time_s = start.elapsed().as_secs_f64();
    if fs::create_dir_all(&dir).is_ok() {
        if let Ok(text) = serde_json::to_string_pretty(&result) {
            if fs::write(dir.join("manifest.json"), text + "\n").is_err() && result.exit_code == 0 {
                result.exit_code = 1;
            }
        }
    }
    result
}

fn locate(sys: &ImpulsiveSystem, o: &OrbitArgs) -> Result<PeriodicOrbit> {
    match find_periodic_orbit(sys, &o.y, o.k, sys.tolerances.periodic)? {
        OrbitSearch::Found(orbit) => Ok(orbit),
        OrbitSearch::NotFound { residual, .. } => Err(Error::VerificationFailed { residual }),
        OrbitSearch::BoundaryLanding => Err(Error::VerificationFailed { residual: f64::INFINITY }),
    }
}

fn construction_json(c: &Construction) -> Value {
    json!({
        "record": c.record,
        "orbit": c.orbit,
        "returns": c.returns,
        "contraction_ratio": c.ratio,
    })
}

/// Configuration of `cfg`'s system with `record` appended.
fn extended(cfg: &SystemConfig, record: &crate::perturb::PerturbationRecord) -> SystemConfig {
    let mut out = cfg.clone();
    out.records.push(record.clone());
    out
}

fn dispatch(cmd: &Command, cfg: &SystemConfig, ctx: &mut Ctx) -> Result<i32> {
    let sys = cfg.build()?;
    match cmd {
        Command::Validate { samples, .. } => {
            let report = validate_system(&sys, *samples);
            ctx.json("validate.json", &report)?;
            return Ok(if report.passed { 0 } else { 2 });
        }
        _ => sys.require_valid()?,
    }
    match cmd {
        Command::Validate { .. } => unreachable!(),
        Command::Simulate { x0, t, .. } => {
            let traj = impulsive_trajectory(&sys, x0, *t)?;
            let mut buf = Vec::new();
            write_csv(&sys, &traj, &mut buf)?;
            ctx.write("trajectory.csv", &buf)?;
            ctx.json(
                "simulate.json",
                json!({
                    "x0": x0,
                    "horizon": t,
                    "impulsive_times": impulsive_times(&traj),
                    "events": traj.events,
                    "tangency_warnings": traj.tangency_warnings,
                }),
            )?;
        }
        Command::Hit { x0, t_max, .. } => {
            let opts = sys.hit_options(t_max.unwrap_or(sys.tolerances.horizon));
            let hit = sys.flow().first_hit(x0, &[&sys.d], &opts)?.hit();
            let doc = match hit {
                Some(h) => json!({
                    "hit": true,
                    "time": h.time,
                    "point": h.point,
                    "chart": h.chart,
                    "interior": h.interior,
                    "transversality": h.transversality,
                }),
                None => json!({ "hit": false, "time": null }),
            };
            ctx.json("hit.json", doc)?;
        }
        Command::Poincare { y, k, find, .. } => {
            if !sys.on_d_hat(y) {
                return Err(Error::OutsidePatch {
                    patch: sys.d_hat.name.clone(),
                    point: *y,
                });
            }
            let v = sys.d_hat.chart_coords(&sys.space, y);
            let iterates = poincare_iterate(&sys, &v, *k)?;
            let orbit = if *find { locate(&sys, &OrbitArgs { y: *y, k: *k })?.into() } else { None };
            ctx.json(
                "poincare.json",
                json!({
                    "start": v,
                    "iterates": iterates.as_ref().map(|(p, _)| p),
                    "time": iterates.as_ref().map(|(_, t)| t),
                    "orbit": orbit,
                }),
            )?;
        }
        Command::Orbits { t_bound, grid, .. } => {
            let orbits = periodic_orbits_up_to(&sys, *t_bound, *grid);
            ctx.json("orbits.json", json!({ "t_bound": t_bound, "count": orbits.len(), "orbits": orbits }))?;
        }
        Command::Index { orbit, radius, .. } => {
            let o = locate(&sys, orbit)?;
            let r = index_radius(&sys, &o, *radius);
            let map = ReturnChartMap { sys: &sys, k: o.k };
            let index = fixed_point_index(&map, &o.chart, r, 32)?;
            ctx.json("index.json", json!({ "orbit": o, "radius": r, "index": index }))?;
        }
        Command::Close { target, mode, eps, budget, .. } => {
            let c = match mode {
                Mode::Impulse => closing_impulse(&sys, target, &ClosingOptions::new(*eps, *budget))?,
                Mode::Field => closing_field(&sys, target, &FieldClosingOptions::new(*eps))?,
            };
            ctx.json("close.json", construction_json(&c))?;
            ctx.config("closed-config.json", &extended(cfg, &c.record))?;
        }
        Command::Attract { orbit, mode, eta, .. } => {
            let o = locate(&sys, orbit)?;
            let c = match mode {
                Mode::Impulse => attractify_impulse(&sys, &o, *eta)?,
                Mode::Field => attractify(&sys, &o, *eta)?,
            };
            ctx.json("attract.json", construction_json(&c))?;
            ctx.config("attracted-config.json", &extended(cfg, &c.record))?;
        }
        Command::Permanence {
            orbit,
            mode,
            attract,
            delta,
            trials,
            ..
        } => {
            let mut o = locate(&sys, orbit)?;
            let mut target = sys.clone();
            if let Some(eta) = attract {
                let c = match mode {
                    Mode::Impulse => attractify_impulse(&sys, &o, *eta)?,
                    Mode::Field => attractify(&sys, &o, *eta)?,
                };
                target = c.system;
                o = c.orbit;
            }
            let delta = match delta {
                Some(d) => *d,
                None => {
                    let r = index_radius(&target, &o, 0.05);
                    0.1 * contraction_margin(&target, &o, r, *mode)?
                }
            };
            let opts = PermanenceOptions {
                delta,
                mode: *mode,
                seed: ctx.seed,
                survival_radius: None,
            };
            let report = permanence_test(&target, &o, &Trials::Random(*trials), &opts)?;
            ctx.json("permanence.json", &report)?;
        }
        Command::Proxy {
            region,
            eps_grid,
            t_min,
            t_max,
            samples,
            ..
        } => {
            let proxy = recurrent_proxy(&sys, region, *eps_grid, *t_min, *t_max, *samples)?;
            let mut buf = Vec::new();
            proxy.write_csv(&mut buf)?;
            ctx.write("proxy.csv", &buf)?;
            ctx.json(
                "proxy.json",
                json!({
                    "cells": proxy.cells.len(),
                    "marked": proxy.marked().count(),
                    "eligible": proxy.eligible().count(),
                    "proxy": proxy,
                }),
            )?;
        }
        Command::Densify { mode, eps, budget, .. } => {
            let (_, report) = densify(&sys, &DensifyOptions::new(*mode, *eps, *budget, ctx.seed))?;
            ctx.json("densify.json", &report)?;
            let mut out = cfg.clone();
            out.records.extend(report.records.iter().cloned());
            ctx.config("densified-config.json", &out)?;
            if report.status == DensifyStatus::BudgetExhausted {
                return Ok(4);
            }
        }
        Command::Shadow {
            paper_chain,
            true_chain,
            delta,
            eps,
            candidates,
            breakpoints,
            ..
        } => {
            if sys.name != "S3" || !(*paper_chain || *true_chain) {
                return Err(Error::InvalidParameter("shadow needs S3 with --paper-chain or --true-chain".into()));
            }
            let chain = if *paper_chain { s3_paper_chain(*delta) } else { s3_true_chain(&sys)? };
            let p = PseudoOrbit::new(&sys, chain, *delta, 2.0)?;
            let verdict = shadowing_falsifier(&sys, &p, *eps, *candidates, *breakpoints)?;
            ctx.json("shadow.json", json!({ "pseudo_orbit": p, "verdict": verdict }))?;
        }
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cli(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("impulsive-lab").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn every_subcommand_parses() {
        for a in [
            vec!["validate", "S1a"],
            vec!["simulate", "S1a", "--x0", "0,2,0", "--t", "10"],
            vec!["hit", "S1a", "--x0", "0,2,0"],
            vec!["poincare", "S1a", "--y", "0,2,0", "--find"],
            vec!["orbits", "S2", "--t-bound", "5"],
            vec!["index", "S1a", "--y", "0,2,0"],
            vec!["close", "S2", "--target", "0.5,0.25,0.25", "--eps", "0.05"],
            vec!["attract", "S1a", "--y", "0,2,0", "--eta", "0.1"],
            vec!["permanence", "S1a", "--y", "0,2,0", "--attract", "0.1"],
            vec!["proxy", "S1a", "--region", "annulus:1.6,2.4,-0.4,0.4"],
            vec!["densify", "S2", "--mode", "impulse", "--eps", "0.1", "--budget", "25", "--seed", "7"],
            vec!["shadow", "S3", "--paper-chain", "--delta", "0.05", "--eps", "0.1"],
        ] {
            assert_eq!(cli(&a).command.name(), a[0]);
        }
    }

    #[test]
    fn region_syntax() {
        assert_eq!(region_arg("patch").unwrap(), Region::Patch);
        assert_eq!(
            region_arg("box:0,0,0:1,1,1").unwrap(),
            Region::Box {
                lo: Point::zeros(),
                hi: Point::repeat(1.0)
            }
        );
        assert!(region_arg("annulus:1,2").is_err());
        assert!(region_arg("disk").is_err());
    }

    #[test]
    fn simulate_writes_csv_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        let r = run(&cli(&["simulate", "S1a", "--x0", "0,2,0", "--t", "10", "--out", out]));
        assert_eq!(r.exit_code, 0, "{:?}", r.error);
        let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
        assert!(csv.starts_with("t,x1,x2,x3,arc_index\n"));
        let doc: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("simulate.json")).unwrap()).unwrap();
        assert_eq!(doc["config_hash"], r.config_hash);
        let times = doc["result"]["impulsive_times"].as_array().unwrap();
        assert!((times[0].as_f64().unwrap() - 1.5 * std::f64::consts::PI).abs() < 1e-6);
        assert!((times[1].as_f64().unwrap() - 3.0 * std::f64::consts::PI).abs() < 1e-6);
        let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);
        assert_eq!(manifest["exit_code"], 0);
    }

    #[test]
    fn error_exit_codes() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(run(&cli(&["validate", "S9", "--out", out])).exit_code, 2);
        let r = run(&cli(&["poincare", "S1a", "--y", "5,5,5", "--out", out]));
        assert_eq!(r.exit_code, 2);
        assert!(r.error.is_some());
        let r = run(&cli(&["shadow", "S1a", "--paper-chain", "--eps", "0.1", "--out", out]));
        assert_eq!(r.exit_code, 2);
    }

    #[test]
    fn config_file_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s1a.json");
        let sys = crate::builtin::builtin_system("S1a").unwrap();
        fs::write(&path, emit_config(&SystemConfig::explicit(&sys, vec![], 4))).unwrap();
        let out = dir.path().join("out");
        let r = run(&cli(&["validate", path.to_str().unwrap(), "--out", out.to_str().unwrap()]));
        assert_eq!(r.exit_code, 0);
        assert_eq!(r.seed, 4);
    }
}
