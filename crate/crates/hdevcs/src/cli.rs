//! Command-line front end.
//!
//! Exit codes: 0 converged, 2 iteration limit reached, 3 infeasible
//! scenario, 64 usage error, 1 any other failure.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use hdevcs_core::baselines::ucc_schedule;
use hdevcs_core::engine::{AdmmConfig, ResidualNorm, Threshold};
use hdevcs_core::metrics::fill_nap;
use serde::Serialize;

use crate::generate::{generate_fleet, FleetGenParams, GenerateError, ObjectiveMode};
use crate::io::export::{
    render_table, write_json, write_rh_trace, write_schedule, write_table1, write_table3, CompareRow, RunReport,
};
use crate::io::scenario_file::{RhDoc, ScenarioFile};
use crate::io::IoError;
use crate::parallel::ThreadPoolExecutor;
use crate::runner::{run_mode, Mode, ModeOutcome, RhOverride, RunError, RunOptions};

// Output goes to stdout without panicking when the reader has gone away.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_MAX_ITER: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "hdevcs", version, about = "Hierarchical distributed EV charging scheduling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scenario bundle.
    Generate(GenerateArgs),
    /// Run one scheduling mode on a scenario.
    Run(RunArgs),
    /// Run several modes on one scenario and tabulate the metrics.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 5 aggregators with 60 EVs each, 48 half-hour steps.
    System1,
    /// 50 aggregators with 180 EVs each, 60 half-hour steps.
    System2,
    /// 2 aggregators with 3 EVs each, 8 hourly steps.
    Fixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Cr,
    CrBdr,
    Mixed,
}

impl From<ObjectiveArg> for ObjectiveMode {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Cr => ObjectiveMode::Cr,
            ObjectiveArg::CrBdr => ObjectiveMode::CrBdr,
            ObjectiveArg::Mixed => ObjectiveMode::Mixed,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub preset: Preset,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for the scenario bundle.
    #[arg(long)]
    pub out: PathBuf,
    /// Objective layout; defaults to the preset's.
    #[arg(long, value_enum)]
    pub objective: Option<ObjectiveArg>,
    /// Concentrate arrivals in the evening peak.
    #[arg(long)]
    pub dense_arrival: bool,
    /// Store receding-horizon settings with this window length.
    #[arg(long)]
    pub rh_window: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormArg {
    L2,
    Linf,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Penalty parameter.
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    /// Primal residual threshold.
    #[arg(long, default_value_t = 1e-3)]
    pub thp: f64,
    /// Dual residual threshold.
    #[arg(long, default_value_t = 1e-3)]
    pub thd: f64,
    /// Treat thresholds as absolute instead of scaled by the square root of
    /// the variable count.
    #[arg(long)]
    pub absolute: bool,
    #[arg(long, value_enum, default_value_t = NormArg::L2)]
    pub norm: NormArg,
    #[arg(long, default_value_t = 5000)]
    pub max_iter: usize,
    /// Worker threads for per-agent updates.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Weight of every charging-cost objective.
    #[arg(long)]
    pub cr_weight: Option<f64>,
    /// Weight of every battery-degradation objective.
    #[arg(long)]
    pub bdr_weight: Option<f64>,
    /// Receding-horizon window length in steps.
    #[arg(long)]
    pub window: Option<usize>,
    /// Number of receding-horizon steps to simulate.
    #[arg(long)]
    pub steps: Option<usize>,
}

impl SolverArgs {
    pub fn options(&self) -> RunOptions {
        let th = |v| if self.absolute { Threshold::Absolute(v) } else { Threshold::Relative(v) };
        RunOptions {
            admm: AdmmConfig {
                rho: self.rho,
                primal_threshold: th(self.thp),
                dual_threshold: th(self.thd),
                max_iter: self.max_iter,
                residual_norm: match self.norm {
                    NormArg::L2 => ResidualNorm::L2,
                    NormArg::Linf => ResidualNorm::Linf,
                },
            },
            cr_weight: self.cr_weight,
            bdr_weight: self.bdr_weight,
            rh: RhOverride {
                window: self.window,
                total_steps: self.steps,
            },
            ..RunOptions::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scenario bundle directory.
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub mode: Mode,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Comma-separated modes.
    #[arg(long, value_delimiter = ',', required = true)]
    pub modes: Vec<Mode>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Run(e) if e.is_infeasible() => EXIT_INFEASIBLE,
            CliError::Generate(GenerateError::Infeasible { .. }) => EXIT_INFEASIBLE,
            CliError::Io(IoError::Model(hdevcs_core::model::ModelError::Unreachable { .. })) => EXIT_INFEASIBLE,
            _ => EXIT_FAILURE,
        }
    }
}

/// Parse arguments and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Generate(a) => cmd_generate(&a).map(|()| EXIT_OK),
        Command::Run(a) => cmd_run(&a),
        Command::Compare(a) => cmd_compare(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn preset_params(args: &GenerateArgs) -> FleetGenParams {
    let mut p = match args.preset {
        Preset::System1 => FleetGenParams::system1(args.seed),
        Preset::System2 => FleetGenParams::system2(args.seed),
        Preset::Fixture => FleetGenParams::fixture(args.seed),
    };
    if args.dense_arrival {
        p = p.dense_arrival();
    }
    if let Some(o) = args.objective {
        p = p.with_objective(o.into());
    }
    p
}

fn cmd_generate(args: &GenerateArgs) -> Result<(), CliError> {
    let params = preset_params(args);
    let scenario = generate_fleet(&params)?;
    let rh = match args.rh_window {
        Some(w) if w == 0 || w > scenario.grid.horizon => {
            return Err(anyhow::anyhow!("--rh-window must be between 1 and {}", scenario.grid.horizon).into())
        }
        Some(w) => Some(RhDoc {
            window: w,
            total_steps: scenario.grid.horizon - w + 1,
            warm_start: true,
            events: Vec::new(),
        }),
        None => None,
    };
    let file = ScenarioFile {
        seed: Some(args.seed),
        generation: Some(params),
        rh,
        scenario,
    };
    file.save(&args.out)?;

    let sc = &file.scenario;
    let demand: f64 = sc.evbs.iter().map(|e| e.energy_demand()).sum();
    let ucc = ucc_schedule(sc);
    say!(
        "agents: {} ({} EVB, {} EVA, 1 DNO)",
        sc.evbs.len() + sc.evas.len() + 1,
        sc.evbs.len(),
        sc.evas.len()
    );
    say!("steps: {} x {} h starting at step {}", sc.grid.horizon, sc.grid.step_hours, sc.grid.t0);
    say!("energy demand: {demand:.1} kWh");
    say!("feasibility: every EV target reachable; uncoordinated charging exceeds {} feeder-steps", ucc.violations.len());
    say!("written to {}", args.out.display());
    Ok(())
}

fn load(path: &Path) -> Result<ScenarioFile, CliError> {
    Ok(ScenarioFile::load(path)?)
}

fn executor(workers: usize) -> Result<ThreadPoolExecutor, CliError> {
    if workers == 0 {
        return Err(anyhow::anyhow!("--workers must be at least 1").into());
    }
    Ok(ThreadPoolExecutor::new(workers).context("cannot start worker threads")?)
}

#[derive(Serialize)]
struct Timing<'a> {
    mode: &'a str,
    workers: usize,
    wall_seconds: f64,
}

fn write_outcome(dir: &Path, outcome: &ModeOutcome, workers: usize) -> Result<(), CliError> {
    write_schedule(dir, &outcome.scenario, &outcome.result)?;
    if let Some(trace) = &outcome.trace {
        write_rh_trace(dir, &outcome.scenario, trace)?;
    }
    let name = outcome.mode.name();
    write_json(&dir.join("metrics.json"), &RunReport::new(name, &outcome.result, Some(&outcome.metrics)))?;
    write_json(
        &dir.join("timing.json"),
        &Timing {
            mode: name,
            workers,
            wall_seconds: outcome.wall.as_secs_f64(),
        },
    )?;
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<i32, CliError> {
    let file = load(&args.scenario)?;
    let exec = executor(args.solver.workers)?;
    let outcome = run_mode(&file, args.mode, &args.solver.options(), &exec)?;
    write_outcome(&args.out, &outcome, args.solver.workers)?;
    let r = &outcome.result;
    let m = &outcome.metrics;
    say!(
        "{}: converged {} after {} iterations in {:.3} s; objective {:.6}",
        args.mode,
        r.converged,
        r.iterations,
        outcome.wall.as_secs_f64(),
        r.objective
    );
    say!(
        "PTP {:.3} kW, PTA {:.4}, RMS {:.3} kW, ACC {:.3} $, BDC {:.3} $",
        m.ptp, m.pta, m.rms, m.acc, m.bdc
    );
    if !r.violations.is_empty() {
        say!("feeder or grid capacity exceeded at {} steps", r.violations.len());
    }
    if !r.shortfalls.is_empty() {
        say!("{} EVs missed their target energy", r.shortfalls.len());
    }
    Ok(if r.converged { EXIT_OK } else { EXIT_MAX_ITER })
}

fn cmd_compare(args: &CompareArgs) -> Result<i32, CliError> {
    let file = load(&args.scenario)?;
    let exec = executor(args.solver.workers)?;
    let opts = args.solver.options();
    let mut rows = Vec::new();
    let mut failure: Option<CliError> = None;
    let mut all_converged = true;
    for &mode in &args.modes {
        match run_mode(&file, mode, &opts, &exec) {
            Ok(outcome) => {
                write_outcome(&args.out.join(mode.name()), &outcome, args.solver.workers)?;
                all_converged &= outcome.result.converged;
                rows.push(CompareRow {
                    mode: mode.name().to_string(),
                    metrics: outcome.metrics,
                    iterations: outcome.result.iterations,
                    wall_seconds: outcome.wall.as_secs_f64(),
                    converged: outcome.result.converged,
                });
            }
            Err(e) => {
                eprintln!("error: mode {mode} failed: {e}");
                if failure.is_none() {
                    failure = Some(e.into());
                }
            }
        }
    }
    let mut reports: Vec<_> = rows.iter().map(|r| r.metrics.clone()).collect();
    fill_nap(&mut reports);
    for (row, rep) in rows.iter_mut().zip(reports) {
        row.metrics = rep;
    }
    std::fs::create_dir_all(&args.out).map_err(|source| IoError::File {
        path: args.out.clone(),
        source,
    })?;
    write_table1(&args.out.join("table1.csv"), &rows)?;
    write_table3(&args.out.join("table3.csv"), &rows)?;
    {
        use std::io::Write as _;
        let _ = write!(std::io::stdout(), "{}", render_table(&rows));
    }
    match failure {
        Some(e) => Err(e),
        None if all_converged => Ok(EXIT_OK),
        None => Ok(EXIT_MAX_ITER),
    }
}
