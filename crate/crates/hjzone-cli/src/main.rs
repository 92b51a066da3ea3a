//! Command-line front end for the safety-zone pipeline.
//!
//! One binary, five subcommands: `solve` produces the zone artifact, the
//! other four consume it (`slice`, `classify`, `evaluate`, `oracle-check`).
//! Configuration comes from an optional JSON file mirroring the parameter
//! table defaults; command-line flags override config values.
//!
//! Conventions:
//! - angles are degrees on the command line (configs quote steering in
//!   degrees; keeping the interface in one unit avoids mixups) and radians
//!   everywhere inside
//! - exit codes: 0 success, 2 bad input or validation failure, 3 numerical
//!   failure inside the solver
//! - every command is deterministic for a fixed (config, seed); only latency
//!   figures vary run to run

use std::fmt::Display;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use hjzone_core::oracle::{search_collision, OracleOptions, StateWindow};
use hjzone_core::solver::{default_grid, smoke_grid, solve_two_phase, SolveError};
use hjzone_core::zone::{write_slice_csv, write_slice_svg, SliceOptions};
use hjzone_core::{
    with_workers, GridSpec, Params, SolveOptions, VehicleState, ZoneArtifact,
};

/// Run configuration as stored on disk. Every field is optional in the JSON;
/// omitted fields take the defaults below (the parameter table values for
/// `params`, the shipping grid when `grid` is absent).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    params: Params,
    /// Explicit grid geometry; omit for the default 40x40x20x15x15 grid.
    grid: Option<GridSpec>,
    solve: SolveConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SolveConfig {
    cfl: f64,
    checkpoint_interval: f64,
    /// Worker threads; 0 means one per available core.
    workers: usize,
    report_progress: bool,
    /// Store every braking checkpoint in the artifact (multiplies its size).
    keep_tube: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        let opts = SolveOptions::default();
        SolveConfig {
            cfl: opts.cfl,
            checkpoint_interval: opts.checkpoint_interval,
            workers: opts.workers,
            report_progress: true,
            keep_tube: false,
        }
    }
}

enum CliError {
    /// Unreadable or invalid input: exit 2.
    Input(String),
    /// The solver produced non-finite values: exit 3.
    Numerical(String),
}

fn input(e: impl Display) -> CliError {
    CliError::Input(e.to_string())
}

#[derive(Parser)]
#[command(
    name = "hjzone",
    version,
    about = "Interaction-aware safety zones: solve, inspect, classify, evaluate, cross-check"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the two-phase reachability solve and write the zone artifact
    Solve(SolveArgs),
    /// Sample a 2-D position slice of an artifact into CSV and/or SVG
    Slice(SliceArgs),
    /// Classify one ego/contender pose pair against an artifact
    Classify(ClassifyArgs),
    /// Replay a detection log against the zone and the circular baseline
    Evaluate(EvaluateArgs),
    /// Search for rollout collision witnesses from states the zone calls safe
    OracleCheck(OracleCheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GridPreset {
    /// 40x40x20x15x15 cells, the shipping resolution
    Default,
    /// 10x10x8x5x5 cells, solves in seconds
    Smoke,
}

#[derive(Parser)]
struct SolveArgs {
    /// JSON run config; omitted fields take the documented defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Artifact output path
    #[arg(long, short = 'o', default_value = "zone.hjz")]
    out: PathBuf,
    /// Grid preset; overrides any grid in the config
    #[arg(long, value_enum)]
    grid: Option<GridPreset>,
    /// CFL number in (0, 1]
    #[arg(long)]
    cfl: Option<f64>,
    /// Braking-phase checkpoint spacing, seconds
    #[arg(long)]
    checkpoint_interval: Option<f64>,
    /// Worker threads (0 = one per core)
    #[arg(long)]
    workers: Option<usize>,
    /// Store the braking tube in the artifact (large)
    #[arg(long)]
    keep_tube: bool,
    /// Suppress per-checkpoint progress lines
    #[arg(long)]
    quiet: bool,
}

#[derive(Parser)]
struct SliceArgs {
    #[arg(long)]
    artifact: PathBuf,
    /// Relative heading of the slice, degrees
    #[arg(long, allow_negative_numbers = true)]
    psi_deg: f64,
    /// Ego speed, m/s
    #[arg(long)]
    v_ego: f64,
    /// Contender speed, m/s
    #[arg(long)]
    v_contender: f64,
    /// CSV output path (x,y,value rows)
    #[arg(long)]
    csv: Option<PathBuf>,
    /// SVG output path (zone region, zero contour, ego glyph)
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Samples along x
    #[arg(long, default_value_t = SliceOptions::default().nx)]
    nx: usize,
    /// Samples along y
    #[arg(long, default_value_t = SliceOptions::default().ny)]
    ny: usize,
}

#[derive(Parser)]
struct ClassifyArgs {
    #[arg(long)]
    artifact: PathBuf,
    /// Ego state as x,y,heading-deg,speed
    #[arg(long, value_delimiter = ',', num_args = 4, allow_hyphen_values = true)]
    ego: Vec<f64>,
    /// Contender state as x,y,heading-deg,speed
    #[arg(long, value_delimiter = ',', num_args = 4, allow_hyphen_values = true)]
    contender: Vec<f64>,
    /// Critical iff interpolated value < margin (meters); default is the
    /// margin stored in the artifact parameters
    #[arg(long, allow_negative_numbers = true)]
    margin: Option<f64>,
}

#[derive(Parser)]
struct EvaluateArgs {
    #[arg(long)]
    artifact: PathBuf,
    /// Detection log (JSON, schema "hjzone-log/1")
    #[arg(long)]
    log: PathBuf,
    /// Write the full report as JSON here, in addition to the printed table
    #[arg(long)]
    report: Option<PathBuf>,
    /// JSON run config; its params override the artifact's stored params
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (0 = one per core)
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Parser)]
struct OracleCheckArgs {
    #[arg(long)]
    artifact: PathBuf,
    /// States sampled in the scan window
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Rollout schedules tried per state (constant control-vertex sweep plus
    /// seeded random refinements)
    #[arg(long, default_value_t = 10_000)]
    budget: usize,
    /// Worker threads (0 = one per core)
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(args) => run_solve(args),
        Command::Slice(args) => run_slice(args),
        Command::Classify(args) => run_classify(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::OracleCheck(args) => run_oracle_check(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(3)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| input(format!("config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| input(format!("config {}: {e}", path.display())))
}

fn load_artifact(path: &Path) -> Result<ZoneArtifact, CliError> {
    ZoneArtifact::load(path).map_err(|e| input(format!("artifact {}: {e}", path.display())))
}

fn run_solve(args: SolveArgs) -> Result<(), CliError> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(v) = args.cfl {
        config.solve.cfl = v;
    }
    if let Some(v) = args.checkpoint_interval {
        config.solve.checkpoint_interval = v;
    }
    if let Some(v) = args.workers {
        config.solve.workers = v;
    }
    if args.keep_tube {
        config.solve.keep_tube = true;
    }
    if args.quiet {
        config.solve.report_progress = false;
    }
    config.params.validate().map_err(input)?;
    // explicit monotonicity bound: the node's own coefficient in the update
    // is 1 - cfl, so anything above 1 breaks the scheme ordering
    if !(config.solve.cfl > 0.0 && config.solve.cfl <= 1.0) {
        return Err(input(format!("cfl must be in (0, 1], got {}", config.solve.cfl)));
    }

    let grid = match (args.grid, config.grid.take()) {
        (Some(GridPreset::Default), _) | (None, None) => default_grid(&config.params),
        (Some(GridPreset::Smoke), _) => smoke_grid(&config.params),
        (None, Some(g)) => g.after_deserialize().map_err(input)?,
    };
    let opts = SolveOptions {
        cfl: config.solve.cfl,
        checkpoint_interval: config.solve.checkpoint_interval,
        workers: config.solve.workers,
        report_progress: config.solve.report_progress,
        dissipation_override: None,
    };

    let begin = Instant::now();
    let solution = solve_two_phase(&grid, &config.params, &opts).map_err(|e| match e {
        SolveError::Unstable { .. } => CliError::Numerical(e.to_string()),
        other => input(other),
    })?;
    let wall = begin.elapsed().as_secs_f64();

    // peak accounting: braking checkpoints plus the reaction checkpoints plus
    // the terminal field and the two step buffers, all alive at once at the
    // end of the reaction pass
    let field_mb = grid.num_nodes() as f64 * 4.0 / 1e6;
    let live_fields = solution.braking.len() + solution.reaction.len() + 3;
    let artifact = ZoneArtifact::from_solution(&config.params, &opts, solution, config.solve.keep_tube)
        .map_err(input)?;
    let written = artifact.save(&args.out).map_err(input)?;

    println!("solve wall time: {wall:.1} s");
    println!(
        "peak field memory: {:.1} MB ({live_fields} fields x {field_mb:.1} MB)",
        live_fields as f64 * field_mb
    );
    println!(
        "artifact: {} ({written} bytes, field payload {} bytes)",
        args.out.display(),
        grid.num_nodes() * 4
    );
    Ok(())
}

fn run_slice(args: SliceArgs) -> Result<(), CliError> {
    if args.csv.is_none() && args.svg.is_none() {
        return Err(input("nothing to write: pass --csv and/or --svg"));
    }
    let artifact = load_artifact(&args.artifact)?;
    let opts = SliceOptions { nx: args.nx, ny: args.ny };
    let slice = artifact
        .slice(args.psi_deg.to_radians(), args.v_ego, args.v_contender, &opts)
        .map_err(input)?;

    if let Some(path) = &args.csv {
        let mut w = BufWriter::new(
            fs::File::create(path).map_err(|e| input(format!("{}: {e}", path.display())))?,
        );
        write_slice_csv(&slice, &mut w).map_err(input)?;
        w.flush().map_err(input)?;
        println!("csv: {} ({} rows)", path.display(), slice.values.len());
    }
    if let Some(path) = &args.svg {
        let mut w = BufWriter::new(
            fs::File::create(path).map_err(|e| input(format!("{}: {e}", path.display())))?,
        );
        write_slice_svg(&slice, &artifact.params().geometry(), &mut w).map_err(input)?;
        w.flush().map_err(input)?;
        println!("svg: {} ({} contour polylines)", path.display(), slice.contour.len());
    }
    Ok(())
}

fn state_from_flags(raw: &[f64], what: &str) -> Result<VehicleState, CliError> {
    if raw.len() != 4 {
        return Err(input(format!("--{what} needs x,y,heading-deg,speed (got {} values)", raw.len())));
    }
    Ok(VehicleState { x: raw[0], y: raw[1], heading: raw[2].to_radians(), speed: raw[3] })
}

fn run_classify(args: ClassifyArgs) -> Result<(), CliError> {
    let artifact = load_artifact(&args.artifact)?;
    let ego = state_from_flags(&args.ego, "ego")?;
    let contender = state_from_flags(&args.contender, "contender")?;
    let margin = args.margin.unwrap_or(artifact.params().classification_margin);
    let c = artifact.classify_with_margin(&ego, &contender, margin);

    let zone_verdict = if c.safety_critical { "safety-critical" } else { "clear" };
    if c.in_domain {
        println!("zone: {zone_verdict}, value = {:.3} m (margin {margin} m)", c.value);
    } else {
        println!("zone: {zone_verdict}, out of domain (beyond worst-case closing reach)");
    }
    println!("baseline: {}", if c.baseline_critical { "critical" } else { "clear" });
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let artifact = load_artifact(&args.artifact)?;
    let log = hjzone_core::eval::FrameLog::load(&args.log)
        .map_err(|e| input(format!("log {}: {e}", args.log.display())))?;
    let params = match args.config.as_deref() {
        Some(_) => load_config(args.config.as_deref())?.params,
        None => artifact.params().clone(),
    };
    let report = with_workers(args.workers, || {
        hjzone_core::eval::evaluate(&log, &artifact, &params)
    })
    .map_err(input)?;

    print!("{}", report.human_table());
    if let Some(path) = &args.report {
        let json = serde_json::to_string_pretty(&report).map_err(input)?;
        fs::write(path, json + "\n").map_err(|e| input(format!("{}: {e}", path.display())))?;
        println!("report: {}", path.display());
    }
    Ok(())
}

fn run_oracle_check(args: OracleCheckArgs) -> Result<(), CliError> {
    if args.samples == 0 {
        return Err(input("--samples must be positive"));
    }
    let artifact = load_artifact(&args.artifact)?;
    let params = artifact.params().clone();
    let eps = artifact.conservative_margin();
    let window = StateWindow::scan_default(params.v_max);
    let opts = OracleOptions {
        seed: args.seed,
        random_schedules: args.budget.saturating_sub(36),
        ..OracleOptions::default()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let states: Vec<_> = (0..args.samples).map(|_| window.sample(&mut rng)).collect();
    // indexed streams keep the scan deterministic for any worker count
    let results: Vec<(bool, bool)> = with_workers(args.workers, || {
        states
            .par_iter()
            .enumerate()
            .map(|(i, z)| {
                let witness = search_collision(z, &params, &opts, i as u64).is_some();
                let value =
                    artifact.field().interpolate(&z.to_array()).unwrap_or(f64::INFINITY);
                (witness, witness && value >= eps)
            })
            .collect()
    });
    let witnesses = results.iter().filter(|(w, _)| *w).count();
    let violations = results.iter().filter(|(_, v)| *v).count();

    println!(
        "sampled {} states in the scan window (seed {}, budget {} rollouts per state)",
        args.samples, args.seed, args.budget
    );
    println!("collision witnesses found: {witnesses}");
    println!(
        "completeness violations (witness exists but zone value >= {eps:.2} m): {violations}"
    );
    if witnesses == 0 {
        println!("violation rate: n/a (no witnesses)");
    } else {
        println!("violation rate: {:.4}", violations as f64 / witnesses as f64);
    }
    Ok(())
}
