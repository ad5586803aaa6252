//! Receding-horizon operation: solve over a sliding window, apply the first
//! step, advance one step, repeat. Agents may swap their objective between
//! windows without notifying anyone.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::engine::{AdmmConfig, EngineError, EngineState, HdevcsSolver, Shortfall};
use crate::exec::Executor;
use crate::model::{
    AgentRef, DnoSpec, EvaSpec, EvbSpec, ModelError, ObjectiveSpec, Scenario, TimeGrid,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RhError {
    #[error("invalid receding-horizon configuration: {0}")]
    Config(String),
    #[error("event at step {step} references unknown agent {agent:?}")]
    UnknownAgent { step: usize, agent: AgentRef },
    #[error("window starting at step {step}: {source}")]
    Window { step: usize, source: ModelError },
    #[error("window starting at step {step}: {source}")]
    Solve { step: usize, source: EngineError },
}

/// An objective switch that takes effect from `step` on.
#[derive(Debug, Clone, PartialEq)]
pub struct PnpEvent {
    pub step: usize,
    pub agent: AgentRef,
    pub objective: ObjectiveSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhConfig {
    pub total_steps: usize,
    pub window: usize,
    pub warm_start: bool,
    pub events: Vec<PnpEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowStats {
    pub step: usize,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhDiagnostic {
    pub step: usize,
    pub evb_id: u32,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhTrace {
    /// Applied power per EVB (indexed like `scenario.evbs`) and step.
    pub applied: Vec<Vec<f64>>,
    /// Realized energy per EVB at the start of each step, plus the final state.
    pub energy: Vec<Vec<f64>>,
    pub windows: Vec<WindowStats>,
    pub diagnostics: Vec<RhDiagnostic>,
    pub shortfalls: Vec<Shortfall>,
}

/// Apply every event due at `step` to `scenario`, returning how many fired.
fn apply_events(
    scenario: &mut Scenario,
    events: &[PnpEvent],
    step: usize,
) -> usize {
    let mut fired = 0;
    for ev in events.iter().filter(|e| e.step == step) {
        match ev.agent {
            AgentRef::Evb(id) => {
                let i = scenario.evb_index(id).expect("validated");
                scenario.evbs[i].objective = ev.objective.clone();
            }
            AgentRef::Eva(id) => {
                let j = scenario.eva_index(id).expect("validated");
                scenario.evas[j].objective = ev.objective.clone();
            }
            AgentRef::Dno => scenario.dno.objective = ev.objective.clone(),
        }
        fired += 1;
    }
    fired
}

/// Window problem starting at absolute step `k` with realized energies `energy`.
/// EVs that cannot reach their target inside the window get the reachable
/// maximum as target instead.
fn window_scenario(
    full: &Scenario,
    k: usize,
    window: usize,
    energy: &[f64],
    diagnostics: &mut Vec<RhDiagnostic>,
) -> Result<Scenario, ModelError> {
    let th = full.grid.step_hours;
    let range = k..k + window;
    let mut evbs = Vec::with_capacity(full.evbs.len());
    for (i, evb) in full.evbs.iter().enumerate() {
        let c = energy[i];
        let mut spec = EvbSpec {
            id: evb.id,
            eva_id: evb.eva_id,
            p_min: evb.p_min[range.clone()].to_vec(),
            p_max: evb.p_max[range.clone()].to_vec(),
            battery_capacity: evb.battery_capacity.max(c),
            initial_energy: c,
            arrival_step: evb.arrival_step.saturating_sub(k),
            departure_step: evb.departure_step.saturating_sub(k),
            netload: evb.netload[range.clone()].to_vec(),
            objective: evb.objective.slice(k, window),
            objective_weight: evb.objective_weight,
        };
        if evb.departure_step <= k {
            // Gone: keep the agent with no plugged step in the window.
            spec.arrival_step = window;
            spec.departure_step = window + 1;
            spec.battery_capacity = c;
        } else if spec.departure_step <= window {
            let reachable: f64 = (spec.arrival_step..spec.departure_step)
                .map(|t| spec.p_max[t])
                .sum::<f64>()
                * th;
            let demand = spec.battery_capacity - c;
            if demand > reachable + 1e-9 * (1.0 + demand.abs()) {
                diagnostics.push(RhDiagnostic {
                    step: k,
                    evb_id: evb.id,
                    message: alloc::format!(
                        "target unreachable: needs {demand} kWh, at most {reachable} kWh; charging at maximum power"
                    ),
                });
                log::warn!("EVB {} cannot reach its target from step {k}", evb.id);
                spec.battery_capacity = c + reachable;
                spec.objective = ObjectiveSpec::ConstantPower;
                for t in spec.arrival_step..spec.departure_step {
                    spec.p_min[t] = spec.p_max[t];
                }
            }
        }
        evbs.push(spec);
    }
    let evas = full
        .evas
        .iter()
        .map(|e| EvaSpec {
            id: e.id,
            feeder_capacity: e.feeder_capacity[range.clone()].to_vec(),
            objective: e.objective.slice(k, window),
            objective_weight: e.objective_weight,
        })
        .collect();
    let dno = DnoSpec {
        ev_capacity: full.dno.ev_capacity[range.clone()].to_vec(),
        objective: full.dno.objective.slice(k, window),
        objective_weight: full.dno.objective_weight,
    };
    Scenario::new(
        TimeGrid::new(full.grid.t0 + k, window, th)?,
        dno,
        evas,
        evbs,
        full.price[range].to_vec(),
        full.bdr,
    )
}

/// Run the receding-horizon loop over `rh.total_steps` steps. The scenario
/// must cover `total_steps + window − 1` steps.
pub fn run_rh<E: Executor>(
    scenario: &Scenario,
    rh: &RhConfig,
    admm: AdmmConfig,
    exec: &E,
) -> Result<RhTrace, RhError> {
    if rh.window == 0 {
        return Err(RhError::Config("window must be at least one step".into()));
    }
    let needed = rh.total_steps + rh.window - 1;
    if scenario.grid.horizon < needed {
        return Err(RhError::Config(alloc::format!(
            "scenario covers {} steps, {needed} needed",
            scenario.grid.horizon
        )));
    }
    for ev in &rh.events {
        let known = match ev.agent {
            AgentRef::Evb(id) => scenario.evb_index(id).is_some(),
            AgentRef::Eva(id) => scenario.eva_index(id).is_some(),
            AgentRef::Dno => true,
        };
        if !known {
            return Err(RhError::UnknownAgent {
                step: ev.step,
                agent: ev.agent,
            });
        }
    }

    let th = scenario.grid.step_hours;
    let mut current = scenario.clone();
    let mut energy: Vec<f64> = scenario.evbs.iter().map(|e| e.initial_energy).collect();
    let mut trace = RhTrace {
        applied: vec![Vec::with_capacity(rh.total_steps); scenario.evbs.len()],
        energy: energy.iter().map(|&c| vec![c]).collect(),
        windows: Vec::with_capacity(rh.total_steps),
        diagnostics: Vec::new(),
        shortfalls: Vec::new(),
    };
    let mut warm: Option<EngineState> = None;

    for k in 0..rh.total_steps {
        if apply_events(&mut current, &rh.events, k) > 0 {
            log::info!("objective switch applied at step {k}");
        }
        let window = window_scenario(&current, k, rh.window, &energy, &mut trace.diagnostics)
            .map_err(|source| RhError::Window { step: k, source })?;
        let start = match warm.take() {
            Some(prev) if rh.warm_start => prev.shifted(),
            _ => EngineState::zeros(&window),
        };
        let mut solver = HdevcsSolver::with_state(&window, admm, exec, start)
            .map_err(|source| RhError::Solve { step: k, source })?;
        solver
            .run()
            .map_err(|source| RhError::Solve { step: k, source })?;
        let converged = solver.is_converged();
        if !converged {
            log::warn!("window at step {k} stopped at the iteration limit");
        }
        let state = solver.into_state();
        trace.windows.push(WindowStats {
            step: k,
            iterations: state.iteration,
            converged,
            objective: crate::engine::schedule_objective(&window, &state.evb_power),
        });
        for (i, evb) in scenario.evbs.iter().enumerate() {
            let p = if evb.is_plugged(k) {
                state.evb_power[i][0]
            } else {
                0.0
            };
            energy[i] += th * p;
            trace.applied[i].push(p);
            trace.energy[i].push(energy[i]);
            if evb.departure_step == k + 1 {
                let short = evb.battery_capacity - energy[i];
                if short > 1e-6 {
                    trace.shortfalls.push(Shortfall {
                        evb_id: evb.id,
                        energy_kwh: short,
                    });
                }
            }
        }
        warm = Some(state);
    }
    Ok(trace)
}
