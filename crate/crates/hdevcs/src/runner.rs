//! Runs one scheduling mode on a scenario and times it.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use hdevcs_core::baselines::oracle::{centralized_oracle, OracleError};
use hdevcs_core::baselines::sharing::{hierarchical_sharing_admm, SharingConfig};
use hdevcs_core::baselines::{scc_schedule, ucc_schedule};
use hdevcs_core::engine::{solve, AdmmConfig, EngineError, ScheduleResult};
use hdevcs_core::exec::Executor;
use hdevcs_core::metrics::{evaluate, MetricError, MetricReport};
use hdevcs_core::model::{ModelError, ObjectiveSpec, Scenario};
use hdevcs_core::qp::QpError;
use hdevcs_core::rh::{run_rh, RhConfig, RhError, RhTrace};
use thiserror::Error;

use crate::io::scenario_file::ScenarioFile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Hdevcs,
    RhHdevcs,
    Ucc,
    Scc,
    Sharing,
    Oracle,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Hdevcs,
        Mode::RhHdevcs,
        Mode::Ucc,
        Mode::Scc,
        Mode::Sharing,
        Mode::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Hdevcs => "hdevcs",
            Mode::RhHdevcs => "rh-hdevcs",
            Mode::Ucc => "ucc",
            Mode::Scc => "scc",
            Mode::Sharing => "sharing",
            Mode::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode `{s}`"))
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Rh(#[from] RhError),
    #[error("oracle: {0}")]
    Oracle(#[from] OracleError),
    #[error("metrics: {0}")]
    Metric(#[from] MetricError),
    #[error("{0}")]
    Config(String),
}

impl RunError {
    /// Whether the failure means the scenario admits no feasible schedule.
    pub fn is_infeasible(&self) -> bool {
        let engine = |e: &EngineError| {
            matches!(
                e,
                EngineError::Subproblem {
                    source: QpError::Infeasible { .. },
                    ..
                }
            )
        };
        match self {
            RunError::Model(ModelError::Unreachable { .. }) => true,
            RunError::Engine(e) => engine(e),
            RunError::Rh(RhError::Solve { source, .. }) => engine(source),
            RunError::Rh(RhError::Window {
                source: ModelError::Unreachable { .. },
                ..
            }) => true,
            RunError::Oracle(OracleError::Infeasible) => true,
            _ => false,
        }
    }
}

/// Receding-horizon settings given on the command line; unset fields fall
/// back to the scenario file.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RhOverride {
    pub window: Option<usize>,
    pub total_steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub admm: AdmmConfig,
    pub cr_weight: Option<f64>,
    pub bdr_weight: Option<f64>,
    pub rh: RhOverride,
    pub oracle_tol: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            admm: AdmmConfig::default(),
            cr_weight: None,
            bdr_weight: None,
            rh: RhOverride::default(),
            oracle_tol: 1e-9,
        }
    }
}

/// Result of one mode. For receding-horizon runs `scenario` covers only the
/// simulated steps and `result` holds the applied power.
#[derive(Debug, Clone)]
pub struct ModeOutcome {
    pub mode: Mode,
    pub scenario: Scenario,
    pub result: ScheduleResult,
    pub trace: Option<RhTrace>,
    pub metrics: MetricReport,
    pub wall: Duration,
}

/// Override the weight of every charging-cost and every degradation objective.
pub fn apply_weights(scenario: &Scenario, cr: Option<f64>, bdr: Option<f64>) -> Result<Scenario, ModelError> {
    if cr.is_none() && bdr.is_none() {
        return Ok(scenario.clone());
    }
    let pick = |obj: &ObjectiveSpec, w: f64| match obj {
        ObjectiveSpec::LinearPrice { .. } => cr.unwrap_or(w),
        ObjectiveSpec::BdrQuadratic { .. } => bdr.unwrap_or(w),
        _ => w,
    };
    let mut evbs = scenario.evbs.clone();
    for e in &mut evbs {
        e.objective_weight = pick(&e.objective, e.objective_weight);
    }
    let mut evas = scenario.evas.clone();
    for e in &mut evas {
        e.objective_weight = pick(&e.objective, e.objective_weight);
    }
    Scenario::new(
        scenario.grid,
        scenario.dno.clone(),
        evas,
        evbs,
        scenario.price.clone(),
        scenario.bdr,
    )
}

fn rh_config(file: &ScenarioFile, scenario: &Scenario, over: RhOverride) -> Result<RhConfig, RunError> {
    let mut cfg = match &file.rh {
        Some(doc) => doc
            .to_config(scenario)
            .map_err(|e| RunError::Config(e.to_string()))?,
        None => RhConfig {
            total_steps: 0,
            window: 0,
            warm_start: true,
            events: Vec::new(),
        },
    };
    if let Some(w) = over.window {
        cfg.window = w;
        if file.rh.is_none() {
            cfg.total_steps = scenario.grid.horizon.saturating_sub(w) + 1;
        }
    }
    if let Some(s) = over.total_steps {
        cfg.total_steps = s;
    }
    if cfg.window == 0 || cfg.total_steps == 0 {
        return Err(RunError::Config(
            "rh-hdevcs needs a window and step count, from the scenario or --window/--steps".into(),
        ));
    }
    Ok(cfg)
}

pub fn run_mode<E: Executor>(
    file: &ScenarioFile,
    mode: Mode,
    opts: &RunOptions,
    exec: &E,
) -> Result<ModeOutcome, RunError> {
    let scenario = apply_weights(&file.scenario, opts.cr_weight, opts.bdr_weight)?;
    log::info!(
        "{mode}: {} EVBs, {} EVAs, {} steps",
        scenario.evbs.len(),
        scenario.evas.len(),
        scenario.grid.horizon
    );
    let start = Instant::now();
    let (scenario, mut result, trace) = match mode {
        Mode::Hdevcs => {
            let r = solve(&scenario, opts.admm, exec)?;
            (scenario, r, None)
        }
        Mode::Sharing => {
            let cfg = SharingConfig {
                admm: opts.admm,
                ..SharingConfig::default()
            };
            let r = hierarchical_sharing_admm(&scenario, &cfg, exec)?;
            log::info!(
                "sharing: {} inner iterations, {} inner loops hit the cap",
                r.inner_iterations,
                r.inner_unconverged
            );
            (scenario, r.schedule, None)
        }
        Mode::Ucc => {
            let r = ucc_schedule(&scenario);
            (scenario, r, None)
        }
        Mode::Scc => {
            let r = scc_schedule(&scenario);
            (scenario, r, None)
        }
        Mode::Oracle => {
            let r = centralized_oracle(&scenario, opts.oracle_tol)?;
            (scenario, r, None)
        }
        Mode::RhHdevcs => {
            let cfg = rh_config(file, &scenario, opts.rh)?;
            let trace = run_rh(&scenario, &cfg, opts.admm, exec)?;
            for d in &trace.diagnostics {
                log::warn!("step {}: EVB {}: {}", d.step, d.evb_id, d.message);
            }
            let applied = scenario.truncated(cfg.total_steps)?;
            let mut r = ScheduleResult::from_evb_power(&applied, trace.applied.clone());
            r.iterations = trace.windows.iter().map(|w| w.iterations).sum();
            r.converged = trace.windows.iter().all(|w| w.converged);
            r.shortfalls = trace.shortfalls.clone();
            (applied, r, Some(trace))
        }
    };
    let wall = start.elapsed();
    result.wall_time = Some(wall);
    let metrics = evaluate(&scenario, &result.evb_power)?;
    log::info!(
        "{mode}: {} iterations, converged {}, {:.3} s",
        result.iterations,
        result.converged,
        wall.as_secs_f64()
    );
    Ok(ModeOutcome {
        mode,
        scenario,
        result,
        trace,
        metrics,
        wall,
    })
}
