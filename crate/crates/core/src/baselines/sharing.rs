//! Two-layer sharing-problem ADMM used as the hierarchical comparator.
//!
//! The outer layer is a sharing problem between the EVAs (each contributing
//! its aggregate EV load `x_j`) and the DNO, whose coupling term is the
//! load-variance objective plus the grid capacity. Each EVA's outer update is
//! itself a sharing problem between its EVBs and the EVA's own objective,
//! feeder capacity and outer proximal term, solved by an inner ADMM loop that
//! is warm-started across outer iterations.

use alloc::vec;
use alloc::vec::Vec;

use crate::engine::{
    eva_aggregates, schedule_objective, AdmmConfig, EngineError, ResidualRecord, ScheduleResult,
};
use crate::exec::Executor;
use crate::model::{capacity_violations, ObjectiveSpec, Scenario};
use crate::prox::prox_evb;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharingConfig {
    pub admm: AdmmConfig,
    /// Inner thresholds are the outer ones multiplied by this factor.
    pub inner_tightening: f64,
    pub inner_max_iter: usize,
}

impl Default for SharingConfig {
    fn default() -> Self {
        SharingConfig {
            admm: AdmmConfig::default(),
            inner_tightening: 0.1,
            inner_max_iter: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharingResult {
    pub schedule: ScheduleResult,
    /// Inner iterations summed over all EVAs and outer iterations.
    pub inner_iterations: usize,
    /// Inner loops that stopped at the iteration cap.
    pub inner_unconverged: usize,
}

#[derive(Debug, Clone)]
struct InnerState {
    eva: usize,
    power: Vec<Vec<f64>>,
    share: Vec<f64>,
    dual: Vec<f64>,
}

struct InnerOutcome {
    state: InnerState,
    iterations: usize,
    converged: bool,
    primal: f64,
    failure: Option<EngineError>,
}

fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

/// Minimizer of `w·f(s) + ρ/2‖s − anchor‖² + ρ/(2n)‖s − center‖²` over `s <= cap`.
fn eva_share_update(
    objective: &ObjectiveSpec,
    weight: f64,
    cap: &[f64],
    anchor: &[f64],
    center: &[f64],
    rho: f64,
    n: f64,
) -> Vec<f64> {
    (0..anchor.len())
        .map(|t| {
            let num = rho * anchor[t] + rho / n * center[t];
            let den = rho + rho / n;
            let s = match objective {
                ObjectiveSpec::LinearPrice { price } => (num - weight * price[t]) / den,
                ObjectiveSpec::BdrQuadratic { gamma1, gamma2, .. } => {
                    (num - weight * gamma2) / (den + 2.0 * weight * gamma1)
                }
                _ => num / den,
            };
            s.min(cap[t])
        })
        .collect()
}

/// Minimizer of `w·f_d(−S) + ρ/(2N)‖S − center‖²` over `S <= cap`, where `S`
/// is the total EV load.
fn grid_share_update(scenario: &Scenario, center: &[f64], rho: f64, n: f64) -> Vec<f64> {
    let w = scenario.dno.objective_weight;
    let k = rho / n;
    (0..center.len())
        .map(|t| {
            let s = match &scenario.dno.objective {
                ObjectiveSpec::Lvm {
                    target,
                    total_netload,
                } => (k * center[t] - 2.0 * w * (total_netload[t] - target)) / (2.0 * w + k),
                ObjectiveSpec::LinearPrice { price } => center[t] + w * price[t] / k,
                _ => center[t],
            };
            s.min(scenario.dno.ev_capacity[t])
        })
        .collect()
}

fn run_inner(
    scenario: &Scenario,
    mut st: InnerState,
    anchor: &[f64],
    rho: f64,
    thresholds: (f64, f64),
    max_iter: usize,
) -> InnerOutcome {
    let members = scenario.members(st.eva);
    let count = members.len() as f64;
    let eva = &scenario.evas[st.eva];
    let cap = &scenario.available_capacity(st.eva).series;
    let horizon = scenario.grid.horizon;
    let mut outcome = InnerOutcome {
        state: InnerState {
            eva: st.eva,
            power: Vec::new(),
            share: Vec::new(),
            dual: Vec::new(),
        },
        iterations: 0,
        converged: false,
        primal: 0.0,
        failure: None,
    };
    let mean = |power: &[Vec<f64>]| -> Vec<f64> {
        let mut m = vec![0.0; horizon];
        for p in power {
            for (a, v) in m.iter_mut().zip(p) {
                *a += v / count;
            }
        }
        m
    };
    for _ in 0..max_iter {
        outcome.iterations += 1;
        let avg = mean(&st.power);
        for (k, &i) in members.iter().enumerate() {
            let v: Vec<f64> = (0..horizon)
                .map(|t| st.power[k][t] - avg[t] + st.share[t] - st.dual[t])
                .collect();
            match prox_evb(&scenario.evbs[i], &scenario.grid, &v, rho) {
                Ok(p) => st.power[k] = p,
                Err(source) => {
                    outcome.failure = Some(EngineError::Subproblem {
                        id: scenario.evbs[i].id,
                        source,
                    });
                    outcome.state = st;
                    return outcome;
                }
            }
        }
        let avg = mean(&st.power);
        let center: Vec<f64> = (0..horizon).map(|t| count * (st.dual[t] + avg[t])).collect();
        let total =
            eva_share_update(&eva.objective, eva.objective_weight, cap, anchor, &center, rho, count);
        let share: Vec<f64> = total.iter().map(|s| s / count).collect();
        let gap: Vec<f64> = (0..horizon).map(|t| avg[t] - share[t]).collect();
        let moved: Vec<f64> = (0..horizon).map(|t| share[t] - st.share[t]).collect();
        for t in 0..horizon {
            st.dual[t] += gap[t];
        }
        st.share = share;
        let primal = libm::sqrt(count) * norm(&gap);
        let dual = rho * libm::sqrt(count) * norm(&moved);
        outcome.primal = primal;
        if primal <= thresholds.0 && dual <= thresholds.1 {
            outcome.converged = true;
            break;
        }
    }
    outcome.state = st;
    outcome
}

/// Run the two-layer comparator from a cold start.
pub fn hierarchical_sharing_admm<E: Executor>(
    scenario: &Scenario,
    config: &SharingConfig,
    exec: E,
) -> Result<SharingResult, EngineError> {
    config.admm.validate()?;
    if !(config.inner_tightening > 0.0) || config.inner_max_iter == 0 {
        return Err(EngineError::Config("inner loop settings must be positive"));
    }
    let rho = config.admm.rho;
    let horizon = scenario.grid.horizon;
    let n_eva = scenario.evas.len();
    let (thp, thd) = config.admm.thresholds(scenario);
    let inner_th = (thp * config.inner_tightening, thd * config.inner_tightening);
    let agents = n_eva.max(1) as f64;

    let mut inner: Vec<InnerState> = (0..n_eva)
        .map(|j| InnerState {
            eva: j,
            power: vec![vec![0.0; horizon]; scenario.members(j).len()],
            share: vec![0.0; horizon],
            dual: vec![0.0; horizon],
        })
        .collect();
    let mut loads = vec![vec![0.0; horizon]; n_eva];
    let mut load_mean = vec![0.0; horizon];
    let mut share = vec![0.0; horizon];
    let mut dual = vec![0.0; horizon];
    let mut history: Vec<ResidualRecord> = Vec::new();
    let mut inner_iterations = 0;
    let mut inner_unconverged = 0;
    let mut solves = 0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.admm.max_iter && !converged {
        iterations += 1;
        let anchors: Vec<Vec<f64>> = loads
            .iter()
            .map(|x| (0..horizon).map(|t| x[t] - load_mean[t] + share[t] - dual[t]).collect())
            .collect();
        let outcomes = exec.map(&inner, |st| {
            if st.power.is_empty() {
                return InnerOutcome {
                    state: st.clone(),
                    iterations: 0,
                    converged: true,
                    primal: 0.0,
                    failure: None,
                };
            }
            run_inner(
                scenario,
                st.clone(),
                &anchors[st.eva],
                rho,
                inner_th,
                config.inner_max_iter,
            )
        });
        let mut cluster_primal = Vec::with_capacity(n_eva + 1);
        for (j, out) in outcomes.into_iter().enumerate() {
            if let Some(err) = out.failure {
                return Err(err);
            }
            inner_iterations += out.iterations;
            solves += out.iterations * (out.state.power.len() + 1);
            if !out.converged {
                inner_unconverged += 1;
            }
            cluster_primal.push(out.primal);
            inner[j] = out.state;
        }

        let prev_loads = core::mem::take(&mut loads);
        loads = inner
            .iter()
            .map(|st| {
                let mut s = vec![0.0; horizon];
                for p in &st.power {
                    for (a, v) in s.iter_mut().zip(p) {
                        *a += v;
                    }
                }
                s
            })
            .collect();
        let prev_mean = core::mem::replace(&mut load_mean, vec![0.0; horizon]);
        for x in &loads {
            for (m, v) in load_mean.iter_mut().zip(x) {
                *m += v / agents;
            }
        }
        let center: Vec<f64> = (0..horizon).map(|t| agents * (dual[t] + load_mean[t])).collect();
        let total = grid_share_update(scenario, &center, rho, agents);
        solves += 1;
        let prev_share = core::mem::replace(&mut share, total.iter().map(|s| s / agents).collect());
        let gap: Vec<f64> = (0..horizon).map(|t| load_mean[t] - share[t]).collect();
        for t in 0..horizon {
            dual[t] += gap[t];
        }

        let primal = libm::sqrt(agents) * norm(&gap);
        let mut dual_sq = 0.0;
        for j in 0..n_eva {
            for t in 0..horizon {
                let s = rho
                    * (loads[j][t] - prev_loads[j][t] - (load_mean[t] - prev_mean[t])
                        + (share[t] - prev_share[t]));
                dual_sq += s * s;
            }
        }
        let dual_norm = libm::sqrt(dual_sq);
        let equilibrium_gap = gap.iter().fold(0.0, |m: f64, g| m.max(agents * g.abs()));
        let evb_power = collect_power(scenario, &inner);
        let capacity_excess = capacity_violations(scenario, &evb_power, 0.0)
            .iter()
            .fold(0.0, |m: f64, v| m.max(v.excess));
        cluster_primal.push(primal);
        history.push(ResidualRecord {
            iteration: iterations,
            primal,
            dual: dual_norm,
            objective: schedule_objective(scenario, &evb_power),
            equilibrium_gap,
            capacity_excess,
            cluster_primal,
            cluster_dual: Vec::new(),
        });
        converged =
            primal <= thp && dual_norm <= thd && equilibrium_gap <= thp && capacity_excess <= thp;
    }

    let evb_power = collect_power(scenario, &inner);
    let eva_aggregate = eva_aggregates(scenario, &evb_power);
    let dno_power = (0..horizon).map(|t| -agents * share[t]).collect();
    let schedule = ScheduleResult {
        objective: schedule_objective(scenario, &evb_power),
        violations: capacity_violations(scenario, &evb_power, thp),
        eva_power: eva_aggregate.clone(),
        eva_aggregate,
        dno_power,
        evb_power,
        history,
        iterations,
        converged,
        wall_time: None,
        subproblem_solves: solves,
        shortfalls: Vec::new(),
    };
    Ok(SharingResult {
        schedule,
        inner_iterations,
        inner_unconverged,
    })
}

fn collect_power(scenario: &Scenario, inner: &[InnerState]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; scenario.grid.horizon]; scenario.evbs.len()];
    for st in inner {
        for (k, &i) in scenario.members(st.eva).iter().enumerate() {
            out[i].clone_from(&st.power[k]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn golden(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        let r = 0.5 * (libm::sqrt(5.0) - 1.0);
        for _ in 0..200 {
            let c = b - r * (b - a);
            let d = a + r * (b - a);
            if f(c) < f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn eva_share_matches_numeric_minimizer() {
        let (rho, n, w, price, a, c, cap) = (0.7, 4.0, 2.0, 0.3, 1.5, -2.0, 10.0);
        let obj = ObjectiveSpec::LinearPrice { price: vec![price] };
        let got = eva_share_update(&obj, w, &[cap], &[a], &[c], rho, n)[0];
        let num = golden(
            |s| w * price * s + 0.5 * rho * (s - a) * (s - a) + 0.5 * rho / n * (s - c) * (s - c),
            -100.0,
            cap,
        );
        assert!((got - num).abs() < 1e-7);
    }
}
