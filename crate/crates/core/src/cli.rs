//! Command-line front end: configuration ingestion, subcommand dispatch, and
//! deterministic output emission.
//!
//! Exit codes: 0 success, 1 configuration/usage error, 2 runtime error
//! (integration failure, output I/O). Every output file gets a
//! `<name>.meta.json` sidecar carrying the tool version, config hash, RNG
//! identifier and seeds, enough to re-run the job. Multi-seed jobs fan out
//! across `--jobs` workers and are merged in seed order, so outputs do not
//! depend on scheduling.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::{self, ConfigError, RunConfig};
use crate::density;
use crate::flow::Manifold;
use crate::lie::{self, CheckOptions};
use crate::pdmp::{SwitchingSystem, Trajectory, RNG_ID};
use crate::reach::{self, ReachMode};

#[derive(Debug, Parser)]
#[command(
    name = "switchode",
    version,
    about = "Random-switching ODE systems: hypoellipticity checks, sampling, and invariant-measure estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and validate a configuration, then exit.
    Validate(CommonArgs),
    /// Check hypoellipticity conditions A and B at the configured points.
    Check(CommonArgs),
    /// Sample trajectories of the switched process.
    Simulate(CommonArgs),
    /// Estimate the invariant measure with a time-averaged histogram.
    Density(CommonArgs),
    /// Sample the reachable set from a configured origin.
    Reach(CommonArgs),
    /// Draw endpoints at independent Exp(1) times (the resolvent kernel).
    Resolvent(CommonArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate(_) => "validate",
            Command::Check(_) => "check",
            Command::Simulate(_) => "simulate",
            Command::Density(_) => "density",
            Command::Reach(_) => "reach",
            Command::Resolvent(_) => "resolvent",
        }
    }

    fn args(&self) -> &CommonArgs {
        match self {
            Command::Validate(a)
            | Command::Check(a)
            | Command::Simulate(a)
            | Command::Density(a)
            | Command::Reach(a)
            | Command::Resolvent(a) => a,
        }
    }
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Path to the run configuration (JSON; full-line // comments allowed).
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed (forces a single-seed run).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: config output.dir, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for multi-seed jobs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Format for trajectory sample files.
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Csv,
    Jsonl,
}

#[derive(Debug)]
enum CliError {
    Validation(String),
    Runtime(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

macro_rules! runtime_from {
    ($($ty:ty),*) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Runtime(e.to_string())
            }
        }
    )*};
}
runtime_from!(
    std::io::Error,
    crate::pdmp::PdmpError,
    crate::flow::FlowError,
    crate::lie::LieError,
    crate::density::DensityError,
    crate::reach::ReachError,
    serde_json::Error
);

/// Parses `args` and runs the selected subcommand, returning the process
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => 0,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("runtime error: {msg}");
            2
        }
    }
}

struct Context {
    cfg: RunConfig,
    sys: SwitchingSystem,
    command: &'static str,
    config_path: String,
    config_sha256: String,
    out_dir: PathBuf,
    seed: u64,
    seed_overridden: bool,
    jobs: usize,
    format: OutputFormat,
}

impl Context {
    fn new(command: &'static str, args: &CommonArgs) -> Result<Self, CliError> {
        let raw = fs::read_to_string(&args.config).map_err(|e| {
            CliError::Validation(format!("cannot read {}: {e}", args.config.display()))
        })?;
        let cfg = config::parse_config(&raw)?;
        let sys = cfg.build_system()?;
        let out_dir = args
            .out
            .clone()
            .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        let format = match (&args.format, cfg.output.format.as_deref()) {
            (Some(f), _) => *f,
            (None, Some("jsonl")) => OutputFormat::Jsonl,
            (None, Some("csv")) | (None, None) => OutputFormat::Csv,
            (None, Some(other)) => {
                return Err(CliError::Validation(format!(
                    "output.format: unknown format `{other}`"
                )))
            }
        };
        if args.jobs == 0 {
            return Err(CliError::Validation("--jobs must be at least 1".into()));
        }
        Ok(Context {
            sys,
            command,
            config_path: args.config.display().to_string(),
            config_sha256: hex_digest(raw.as_bytes()),
            out_dir,
            seed: args.seed.unwrap_or(cfg.seed),
            seed_overridden: args.seed.is_some(),
            jobs: args.jobs,
            format,
            cfg,
        })
    }

    fn ensure_out_dir(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.out_dir)?;
        Ok(())
    }

    fn out_file(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// One trajectory seed per run; `--seed` collapses the list.
    fn seeds(&self) -> Vec<u64> {
        if self.seed_overridden {
            return vec![self.seed];
        }
        self.cfg
            .simulate
            .as_ref()
            .and_then(|s| s.seeds.clone())
            .unwrap_or_else(|| vec![self.seed])
    }

    fn write_sidecar(&self, data_file: &Path, extra: serde_json::Value) -> Result<(), CliError> {
        let mut meta = serde_json::json!({
            "tool": "switchode",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config_path": self.config_path,
            "config_sha256": self.config_sha256,
            "rng": RNG_ID,
            "seed": self.seed,
        });
        if let (Some(obj), Some(add)) = (meta.as_object_mut(), extra.as_object()) {
            for (k, v) in add {
                obj.insert(k.clone(), v.clone());
            }
        }
        let mut path = data_file.as_os_str().to_os_string();
        path.push(".meta.json");
        let f = fs::File::create(PathBuf::from(path))?;
        let mut w = BufWriter::new(f);
        serde_json::to_writer_pretty(&mut w, &meta)?;
        writeln!(w)?;
        Ok(())
    }

    fn warn_if_not_periodic(&self) {
        if let Manifold::Torus(_) = self.sys.manifold() {
            for (i, f) in self.sys.fields().iter().enumerate() {
                match lie::periodicity_defect(f, 5) {
                    Ok(defect) if defect > 1e-9 => eprintln!(
                        "warning: system.fields[{i}] deviates from 1-periodicity by {defect:.3e} on a sampled grid"
                    ),
                    _ => {}
                }
            }
        }
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn dispatch(command: &Command) -> Result<(), CliError> {
    let ctx = Context::new(command.name(), command.args())?;
    match command {
        Command::Validate(_) => cmd_validate(&ctx),
        Command::Check(_) => cmd_check(&ctx),
        Command::Simulate(_) => cmd_simulate(&ctx),
        Command::Density(_) => cmd_density(&ctx),
        Command::Reach(_) => cmd_reach(&ctx),
        Command::Resolvent(_) => cmd_resolvent(&ctx),
    }
}

fn cmd_validate(ctx: &Context) -> Result<(), CliError> {
    ctx.warn_if_not_periodic();
    let sys = &ctx.sys;
    println!(
        "configuration ok: {} fields on {}, rates {:?}",
        sys.state_count(),
        match sys.manifold() {
            Manifold::Torus(n) => format!("torus T^{n}"),
            Manifold::Euclidean(n) => format!("R^{n}"),
        },
        sys.rates()
    );
    Ok(())
}

fn check_points(ctx: &Context) -> Result<Vec<Vec<f64>>, CliError> {
    let check = ctx.cfg.require_check()?;
    let n = ctx.sys.manifold().dim();
    let mut points = Vec::new();
    for (i, p) in check.points.iter().enumerate() {
        if p.len() != n {
            return Err(CliError::Validation(format!(
                "check.points[{i}]: expected dimension {n}, got {}",
                p.len()
            )));
        }
        points.push(p.clone());
    }
    if check.random_points > 0 {
        let bounds = match (&check.sample_box, ctx.sys.manifold()) {
            (Some(b), _) => {
                if b.len() != n {
                    return Err(CliError::Validation(format!(
                        "check.sample_box: expected {n} axes, got {}",
                        b.len()
                    )));
                }
                b.clone()
            }
            (None, Manifold::Torus(_)) => vec![(0.0, 1.0); n],
            (None, Manifold::Euclidean(_)) => {
                return Err(CliError::Validation(
                    "check.sample_box: required for random points on a Euclidean manifold".into(),
                ))
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
        for _ in 0..check.random_points {
            points.push(
                bounds
                    .iter()
                    .map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
                    .collect(),
            );
        }
    }
    if points.is_empty() {
        return Err(CliError::Validation(
            "check: no points (set `points` or `random_points`)".into(),
        ));
    }
    Ok(points)
}

fn cmd_check(ctx: &Context) -> Result<(), CliError> {
    ctx.warn_if_not_periodic();
    let check = ctx.cfg.require_check()?;
    let opts = CheckOptions {
        depth_cap: check.depth_cap,
        tol: check.tol,
        ..CheckOptions::default()
    };
    let points = check_points(ctx)?;
    ctx.ensure_out_dir()?;
    let path = ctx.out_file("reports.jsonl");
    let mut w = BufWriter::new(fs::File::create(&path)?);
    for point in &points {
        let a = lie::check_condition_a(ctx.sys.fields(), point, &opts)?;
        let b = lie::check_condition_b(ctx.sys.fields(), point, &opts)?;
        println!("point {point:?}: {a}; {b}");
        serde_json::to_writer(&mut w, &a)?;
        writeln!(w)?;
        serde_json::to_writer(&mut w, &b)?;
        writeln!(w)?;
    }
    w.flush()?;
    ctx.write_sidecar(
        &path,
        serde_json::json!({
            "depth_cap": check.depth_cap,
            "tol": check.tol,
            "points": points.len(),
        }),
    )?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Runs `task` once per seed, fanning out over `jobs` workers; results come
/// back in seed order.
fn run_seeds<T, F>(jobs: usize, seeds: &[u64], task: F) -> Result<Vec<(u64, T)>, CliError>
where
    T: Send,
    F: Fn(u64) -> Result<T, crate::pdmp::PdmpError> + Sync,
{
    if jobs <= 1 || seeds.len() <= 1 {
        let mut out = Vec::with_capacity(seeds.len());
        for &s in seeds {
            out.push((s, task(s)?));
        }
        Ok(out)
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let results: Result<Vec<_>, _> =
            pool.install(|| seeds.par_iter().map(|&s| task(s).map(|t| (s, t))).collect());
        results.map_err(CliError::from)
    }
}

fn sample_trajectories(ctx: &Context) -> Result<Vec<(u64, Trajectory)>, CliError> {
    let sim = ctx.cfg.require_simulate()?;
    let state = ctx.cfg.state_index(
        sim.initial_state,
        "simulate.initial_state",
        ctx.sys.state_count(),
    )?;
    if sim.initial_point.len() != ctx.sys.manifold().dim() {
        return Err(CliError::Validation(format!(
            "simulate.initial_point: expected dimension {}, got {}",
            ctx.sys.manifold().dim(),
            sim.initial_point.len()
        )));
    }
    let seeds = ctx.seeds();
    run_seeds(ctx.jobs, &seeds, |seed| {
        ctx.sys
            .sample_path(&sim.initial_point, state, sim.horizon, seed, sim.sample_dt)
    })
}

fn cmd_simulate(ctx: &Context) -> Result<(), CliError> {
    let sim = ctx.cfg.require_simulate()?;
    ctx.ensure_out_dir()?;
    let trajectories = sample_trajectories(ctx)?;
    for (seed, traj) in &trajectories {
        let extra = serde_json::json!({
            "trajectory_seed": seed,
            "horizon": sim.horizon,
            "sample_dt": sim.sample_dt,
            "initial_state": sim.initial_state,
            "initial_point": sim.initial_point,
        });
        let samples_path = match ctx.format {
            OutputFormat::Csv => {
                let p = ctx.out_file(&format!("trajectory_seed{seed}.csv"));
                traj.write_csv(BufWriter::new(fs::File::create(&p)?))?;
                p
            }
            OutputFormat::Jsonl => {
                let p = ctx.out_file(&format!("trajectory_seed{seed}.jsonl"));
                traj.write_samples_jsonl(BufWriter::new(fs::File::create(&p)?))?;
                p
            }
        };
        ctx.write_sidecar(&samples_path, extra.clone())?;
        let events_path = ctx.out_file(&format!("events_seed{seed}.jsonl"));
        traj.write_events_jsonl(BufWriter::new(fs::File::create(&events_path)?))?;
        ctx.write_sidecar(&events_path, extra)?;
        println!(
            "seed {seed}: {} segments, {} jumps -> {}",
            traj.segments.len(),
            traj.segments.len() - 1,
            samples_path.display()
        );
    }
    Ok(())
}

fn cmd_density(ctx: &Context) -> Result<(), CliError> {
    let sim = ctx.cfg.require_simulate()?;
    let den = ctx.cfg.require_density()?;
    let n = ctx.sys.manifold().dim();
    if den.bounds.len() != n || den.bins.len() != n {
        return Err(CliError::Validation(format!(
            "density: box and bins must have {n} axes"
        )));
    }
    if !(0.0..1.0).contains(&den.burn_in_fraction) {
        return Err(CliError::Validation(
            "density.burn_in_fraction: must be in [0, 1)".into(),
        ));
    }
    ctx.ensure_out_dir()?;
    let trajectories = sample_trajectories(ctx)?;
    let burn_in = den.burn_in_fraction * sim.horizon;
    let trajs: Vec<Trajectory> = trajectories.into_iter().map(|(_, t)| t).collect();
    let hist =
        density::occupation_histogram(&trajs, den.bounds.clone(), den.bins.clone(), burn_in)?;
    let occupation = density::state_occupation(&trajs);
    let path = ctx.out_file("occupation.csv");
    hist.write_csv(BufWriter::new(fs::File::create(&path)?))?;
    ctx.write_sidecar(
        &path,
        serde_json::json!({
            "box": den.bounds,
            "bins": den.bins,
            "horizon": sim.horizon,
            "burn_in": burn_in,
            "sample_dt": sim.sample_dt,
            "seeds": ctx.seeds(),
            "state_occupation": occupation,
            "out_of_box_weight": hist.out_of_box_weight(),
            "total_weight": hist.total_weight(),
        }),
    )?;
    println!(
        "occupation histogram over {} trajectories: {} of {} spatial cells occupied, state occupation {:?} -> {}",
        trajs.len(),
        hist.occupied_spatial_cells(),
        hist.spatial_cells(),
        occupation,
        path.display()
    );
    Ok(())
}

fn cmd_reach(ctx: &Context) -> Result<(), CliError> {
    let rc = ctx.cfg.require_reach()?;
    let n = ctx.sys.manifold().dim();
    if rc.origin.len() != n {
        return Err(CliError::Validation(format!(
            "reach.origin: expected dimension {n}, got {}",
            rc.origin.len()
        )));
    }
    ctx.ensure_out_dir()?;
    let cloud = reach::sample_reachable(
        ctx.sys.fields(),
        &rc.origin,
        ReachMode::from(&rc.mode),
        rc.n_samples,
        rc.max_switches,
        ctx.seed,
        ctx.sys.manifold(),
        ctx.sys.integrator(),
    )?;
    let extra = serde_json::json!({
        "origin": rc.origin,
        "n_samples": rc.n_samples,
        "max_switches": rc.max_switches,
        "skipped": cloud.skipped,
    });
    let csv_path = ctx.out_file("cloud.csv");
    cloud.write_csv(BufWriter::new(fs::File::create(&csv_path)?))?;
    ctx.write_sidecar(&csv_path, extra.clone())?;
    let wit_path = ctx.out_file("witnesses.jsonl");
    cloud.write_witnesses_jsonl(BufWriter::new(fs::File::create(&wit_path)?))?;
    ctx.write_sidecar(&wit_path, extra)?;
    println!(
        "reach cloud: {} witnesses ({} skipped) -> {}",
        cloud.witnesses.len(),
        cloud.skipped,
        csv_path.display()
    );
    Ok(())
}

fn cmd_resolvent(ctx: &Context) -> Result<(), CliError> {
    let rc = ctx.cfg.require_resolvent()?;
    let n = ctx.sys.manifold().dim();
    if rc.origin.len() != n {
        return Err(CliError::Validation(format!(
            "resolvent.origin: expected dimension {n}, got {}",
            rc.origin.len()
        )));
    }
    let state = ctx.cfg.state_index(
        rc.initial_state,
        "resolvent.initial_state",
        ctx.sys.state_count(),
    )?;
    ctx.ensure_out_dir()?;
    // Draw i uses seed + i; worker fan-out cannot change the stream.
    let seeds: Vec<u64> = (0..rc.n_samples as u64)
        .map(|i| ctx.seed.wrapping_add(i))
        .collect();
    let samples = run_seeds(ctx.jobs, &seeds, |seed| {
        ctx.sys.sample_resolvent(&rc.origin, state, seed)
    })?;
    let samples: Vec<(Vec<f64>, usize)> = samples.into_iter().map(|(_, s)| s).collect();

    let path = ctx.out_file("resolvent_samples.csv");
    {
        let mut w = BufWriter::new(fs::File::create(&path)?);
        for i in 1..=n {
            write!(w, "x{i},")?;
        }
        writeln!(w, "state")?;
        for (p, s) in &samples {
            for v in p {
                write!(w, "{},", crate::fmt::f64_17(*v))?;
            }
            writeln!(w, "{}", s + 1)?;
        }
    }
    let extra = serde_json::json!({
        "origin": rc.origin,
        "initial_state": rc.initial_state,
        "n_samples": rc.n_samples,
    });
    ctx.write_sidecar(&path, extra.clone())?;
    println!("{} resolvent draws -> {}", samples.len(), path.display());

    if let (Some(bounds), Some(bins)) = (&rc.bounds, &rc.bins) {
        let hist = density::endpoint_histogram(&samples, bounds.clone(), bins.clone())?;
        let hpath = ctx.out_file("resolvent_histogram.csv");
        hist.write_csv(BufWriter::new(fs::File::create(&hpath)?))?;
        ctx.write_sidecar(&hpath, extra)?;
        println!(
            "resolvent histogram: {} of {} spatial cells occupied -> {}",
            hist.occupied_spatial_cells(),
            hist.spatial_cells(),
            hpath.display()
        );
    }
    Ok(())
}
