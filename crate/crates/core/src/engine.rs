//! The clustered exchange-problem ADMM.
//!
//! The infrastructure is split into one cluster per EVA (its EVBs plus the
//! auxiliary variable `p_au = −p_a`) and one top cluster (all EVAs plus the
//! DNO). Each cluster keeps a single scaled dual and broadcasts
//! `Ω̄ = p̄ + Λ̄`; every agent then updates its own variable from iteration-k
//! broadcasts only, so all primal updates run in parallel.

use alloc::vec;
use alloc::vec::Vec;
use core::time::Duration;

use thiserror::Error;

use crate::exec::Executor;
use crate::model::{capacity_violations, AgentRef, CapacityViolation, Scenario};
use crate::prox::{prox_dno, prox_eva, prox_evb};
use crate::qp::QpError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(&'static str),
    #[error("EVB {id} subproblem failed: {source}")]
    Subproblem { id: u32, source: QpError },
    #[error("initial state does not match the scenario dimensions")]
    StateMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Absolute(f64),
    /// Scaled by the square root of the stacked variable count under the l2 norm.
    Relative(f64),
}

impl Threshold {
    pub fn resolve(&self, dim: usize, norm: ResidualNorm) -> f64 {
        match (*self, norm) {
            (Threshold::Absolute(v), _) => v,
            (Threshold::Relative(v), ResidualNorm::L2) => v * libm::sqrt(dim as f64),
            (Threshold::Relative(v), ResidualNorm::Linf) => v,
        }
    }

    fn value(&self) -> f64 {
        match *self {
            Threshold::Absolute(v) | Threshold::Relative(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualNorm {
    L2,
    Linf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmConfig {
    pub rho: f64,
    pub primal_threshold: Threshold,
    pub dual_threshold: Threshold,
    pub max_iter: usize,
    pub residual_norm: ResidualNorm,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        AdmmConfig {
            rho: 1.0,
            primal_threshold: Threshold::Relative(1e-3),
            dual_threshold: Threshold::Relative(1e-3),
            max_iter: 1000,
            residual_norm: ResidualNorm::L2,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(EngineError::Config("rho must be positive"));
        }
        if !(self.primal_threshold.value() > 0.0 && self.dual_threshold.value() > 0.0) {
            return Err(EngineError::Config("thresholds must be positive"));
        }
        if self.max_iter == 0 {
            return Err(EngineError::Config("max_iter must be at least 1"));
        }
        Ok(())
    }

    /// Number of stacked primal variables: EVBs, EVAs, auxiliaries and the DNO.
    pub fn variable_count(scenario: &Scenario) -> usize {
        (scenario.evbs.len() + 2 * scenario.evas.len() + 1) * scenario.grid.horizon
    }

    /// Resolved `(primal, dual)` thresholds for a scenario.
    pub fn thresholds(&self, scenario: &Scenario) -> (f64, f64) {
        let dim = Self::variable_count(scenario);
        (
            self.primal_threshold.resolve(dim, self.residual_norm),
            self.dual_threshold.resolve(dim, self.residual_norm),
        )
    }
}

/// Per-cluster ADMM state. The auxiliary variable of an EVA cluster is not
/// stored; `−p_a` is substituted wherever it appears.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    /// `Evb` entries followed by the owning `Eva` (standing for `p_au`) for an
    /// EVA cluster; all `Eva` entries followed by `Dno` for the top cluster.
    pub members: Vec<AgentRef>,
    pub average: Vec<f64>,
    pub dual: Vec<f64>,
    pub broadcast: Vec<f64>,
}

impl ClusterState {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// Clusters of a scenario: one per EVA in id order, then the top cluster.
pub fn build_clusters(scenario: &Scenario) -> Vec<ClusterState> {
    let n = scenario.grid.horizon;
    let blank = |members: Vec<AgentRef>| ClusterState {
        members,
        average: vec![0.0; n],
        dual: vec![0.0; n],
        broadcast: vec![0.0; n],
    };
    let mut out = Vec::with_capacity(scenario.evas.len() + 1);
    for (j, eva) in scenario.evas.iter().enumerate() {
        let mut members: Vec<AgentRef> = scenario
            .members(j)
            .iter()
            .map(|&i| AgentRef::Evb(scenario.evbs[i].id))
            .collect();
        if members.is_empty() {
            log::warn!("EVA {} supplies no EVB; its power is held at zero", eva.id);
        }
        members.push(AgentRef::Eva(eva.id));
        out.push(blank(members));
    }
    let mut top: Vec<AgentRef> = scenario.evas.iter().map(|e| AgentRef::Eva(e.id)).collect();
    top.push(AgentRef::Dno);
    out.push(blank(top));
    out
}

/// Iterate of the engine: primal variables plus cluster states.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineState {
    pub iteration: usize,
    /// Indexed like `scenario.evbs`.
    pub evb_power: Vec<Vec<f64>>,
    /// Indexed like `scenario.evas`.
    pub eva_power: Vec<Vec<f64>>,
    pub dno_power: Vec<f64>,
    pub clusters: Vec<ClusterState>,
}

fn shift_series(s: &[f64]) -> Vec<f64> {
    match s.last() {
        Some(&last) => s[1..].iter().copied().chain(core::iter::once(last)).collect(),
        None => Vec::new(),
    }
}

impl EngineState {
    /// Cold start: every primal and dual at zero.
    pub fn zeros(scenario: &Scenario) -> Self {
        let n = scenario.grid.horizon;
        EngineState {
            iteration: 0,
            evb_power: vec![vec![0.0; n]; scenario.evbs.len()],
            eva_power: vec![vec![0.0; n]; scenario.evas.len()],
            dno_power: vec![0.0; n],
            clusters: build_clusters(scenario),
        }
    }

    /// State advanced by one step for the next receding-horizon window: every
    /// series drops its first sample and repeats its last one.
    pub fn shifted(&self) -> Self {
        EngineState {
            iteration: 0,
            evb_power: self.evb_power.iter().map(|s| shift_series(s)).collect(),
            eva_power: self.eva_power.iter().map(|s| shift_series(s)).collect(),
            dno_power: shift_series(&self.dno_power),
            clusters: self
                .clusters
                .iter()
                .map(|c| {
                    let average = shift_series(&c.average);
                    let dual = shift_series(&c.dual);
                    let broadcast = average.iter().zip(&dual).map(|(a, l)| a + l).collect();
                    ClusterState {
                        members: c.members.clone(),
                        average,
                        dual,
                        broadcast,
                    }
                })
                .collect(),
        }
    }

    fn matches(&self, scenario: &Scenario) -> bool {
        let n = scenario.grid.horizon;
        let clusters = build_clusters(scenario);
        self.evb_power.len() == scenario.evbs.len()
            && self.eva_power.len() == scenario.evas.len()
            && self.dno_power.len() == n
            && self.evb_power.iter().chain(&self.eva_power).all(|s| s.len() == n)
            && self.clusters.len() == clusters.len()
            && self
                .clusters
                .iter()
                .zip(&clusters)
                .all(|(a, b)| a.members == b.members && a.average.len() == n && a.dual.len() == n)
    }
}

/// Full primal and dual residual series of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    /// `r_j = p̄_j`, one per cluster.
    pub cluster_primal: Vec<Vec<f64>>,
    /// One per EVB.
    pub evb_dual: Vec<Vec<f64>>,
    /// Residual of each auxiliary variable, one per EVA.
    pub aux_dual: Vec<Vec<f64>>,
    /// One per EVA, measured in the top cluster.
    pub eva_dual: Vec<Vec<f64>>,
    pub dno_dual: Vec<f64>,
}

/// Primal residuals and dual residuals
/// `s = −ρ·N_c·(p^k − p^{k−1} + p̄^{k−1} − p̄^k)` between two consecutive iterates.
pub fn compute_residuals(
    scenario: &Scenario,
    prev: &EngineState,
    cur: &EngineState,
    rho: f64,
) -> Residuals {
    let top = scenario.evas.len();
    let dual = |size: usize, p: &[f64], p_prev: &[f64], avg: &[f64], avg_prev: &[f64]| -> Vec<f64> {
        (0..p.len())
            .map(|t| -rho * size as f64 * (p[t] - p_prev[t] + avg_prev[t] - avg[t]))
            .collect()
    };
    let mut evb_dual = vec![Vec::new(); scenario.evbs.len()];
    let mut aux_dual = Vec::with_capacity(top);
    let mut eva_dual = Vec::with_capacity(top);
    let top_size = cur.clusters[top].size();
    let (top_avg, top_avg_prev) = (&cur.clusters[top].average, &prev.clusters[top].average);
    for j in 0..top {
        let c = &cur.clusters[j];
        let size = c.size();
        let (avg, avg_prev) = (&c.average, &prev.clusters[j].average);
        for &i in scenario.members(j) {
            evb_dual[i] = dual(size, &cur.evb_power[i], &prev.evb_power[i], avg, avg_prev);
        }
        let aux: Vec<f64> = cur.eva_power[j].iter().map(|v| -v).collect();
        let aux_prev: Vec<f64> = prev.eva_power[j].iter().map(|v| -v).collect();
        aux_dual.push(dual(size, &aux, &aux_prev, avg, avg_prev));
        eva_dual.push(dual(
            top_size,
            &cur.eva_power[j],
            &prev.eva_power[j],
            top_avg,
            top_avg_prev,
        ));
    }
    Residuals {
        cluster_primal: cur.clusters.iter().map(|c| c.average.clone()).collect(),
        evb_dual,
        aux_dual,
        eva_dual,
        dno_dual: dual(top_size, &cur.dno_power, &prev.dno_power, top_avg, top_avg_prev),
    }
}

fn sum_sq(s: &[f64]) -> f64 {
    s.iter().map(|v| v * v).sum()
}

fn max_abs(s: &[f64]) -> f64 {
    s.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
}

/// Summary of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualRecord {
    pub iteration: usize,
    pub primal: f64,
    pub dual: f64,
    pub objective: f64,
    /// `max |N_cj · p̄_j(t)|`, the worst pointwise equilibrium violation.
    pub equilibrium_gap: f64,
    /// Largest feeder or grid capacity excess of the EVB schedule.
    pub capacity_excess: f64,
    /// l2 norm of the stacked primal residual of each cluster.
    pub cluster_primal: Vec<f64>,
    /// l2 norm of the stacked dual residual of each cluster's members.
    pub cluster_dual: Vec<f64>,
}

impl Residuals {
    pub fn summarize(
        &self,
        sizes: &[usize],
        members: impl Fn(usize) -> Vec<usize>,
        norm: ResidualNorm,
    ) -> (f64, f64, Vec<f64>, Vec<f64>) {
        let top = sizes.len() - 1;
        let cluster_primal: Vec<f64> = self
            .cluster_primal
            .iter()
            .zip(sizes)
            .map(|(r, &n)| libm::sqrt(n as f64 * sum_sq(r)))
            .collect();
        let mut cluster_dual = Vec::with_capacity(sizes.len());
        let mut top_sq = sum_sq(&self.dno_dual);
        for j in 0..top {
            let mut sq = sum_sq(&self.aux_dual[j]);
            for i in members(j) {
                sq += sum_sq(&self.evb_dual[i]);
            }
            cluster_dual.push(libm::sqrt(sq));
            top_sq += sum_sq(&self.eva_dual[j]);
        }
        cluster_dual.push(libm::sqrt(top_sq));
        let (primal, dual) = match norm {
            ResidualNorm::L2 => (
                libm::sqrt(cluster_primal.iter().map(|v| v * v).sum()),
                libm::sqrt(cluster_dual.iter().map(|v| v * v).sum()),
            ),
            ResidualNorm::Linf => {
                let primal = self.cluster_primal.iter().map(|r| max_abs(r)).fold(0.0, f64::max);
                let dual = self
                    .evb_dual
                    .iter()
                    .chain(&self.aux_dual)
                    .chain(&self.eva_dual)
                    .chain(core::iter::once(&self.dno_dual))
                    .map(|s| max_abs(s))
                    .fold(0.0, f64::max);
                (primal, dual)
            }
        };
        (primal, dual, cluster_primal, cluster_dual)
    }
}

/// Energy an EV fails to receive by departure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shortfall {
    pub evb_id: u32,
    pub energy_kwh: f64,
}

/// Outcome of a scheduler run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleResult {
    /// Indexed like `scenario.evbs`.
    pub evb_power: Vec<Vec<f64>>,
    /// EVA decision variables `p_a` (equal to the aggregate for non-ADMM schedulers).
    pub eva_power: Vec<Vec<f64>>,
    /// `Σ p_v` over each EVA's EVBs.
    pub eva_aggregate: Vec<Vec<f64>>,
    pub dno_power: Vec<f64>,
    pub history: Vec<ResidualRecord>,
    pub iterations: usize,
    pub converged: bool,
    /// Filled in by callers that own a clock.
    pub wall_time: Option<Duration>,
    pub subproblem_solves: usize,
    pub objective: f64,
    pub violations: Vec<CapacityViolation>,
    pub shortfalls: Vec<Shortfall>,
}

impl ScheduleResult {
    /// Assemble a result for a schedule given only EVB trajectories.
    pub fn from_evb_power(scenario: &Scenario, evb_power: Vec<Vec<f64>>) -> Self {
        let eva_aggregate = eva_aggregates(scenario, &evb_power);
        let dno_power = dno_from_aggregates(scenario, &eva_aggregate);
        ScheduleResult {
            objective: schedule_objective(scenario, &evb_power),
            violations: capacity_violations(scenario, &evb_power, 1e-9),
            eva_power: eva_aggregate.clone(),
            eva_aggregate,
            dno_power,
            evb_power,
            history: Vec::new(),
            iterations: 0,
            converged: true,
            wall_time: None,
            subproblem_solves: 0,
            shortfalls: Vec::new(),
        }
    }

    /// Total EV charging power per step.
    pub fn total_ev_power(&self) -> Vec<f64> {
        let n = self.dno_power.len();
        let mut total = vec![0.0; n];
        for p in &self.evb_power {
            for (s, v) in total.iter_mut().zip(p) {
                *s += v;
            }
        }
        total
    }
}

pub fn eva_aggregates(scenario: &Scenario, evb_power: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = scenario.grid.horizon;
    (0..scenario.evas.len())
        .map(|j| {
            let mut agg = vec![0.0; n];
            for &i in scenario.members(j) {
                for (a, p) in agg.iter_mut().zip(&evb_power[i]) {
                    *a += p;
                }
            }
            agg
        })
        .collect()
}

fn dno_from_aggregates(scenario: &Scenario, agg: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; scenario.grid.horizon];
    for a in agg {
        for (d, v) in out.iter_mut().zip(a) {
            *d -= v;
        }
    }
    out
}

/// Weighted objective of an EVB schedule with the EVA and DNO variables set to
/// their consistent values `p_a = Σ p_v` and `p_d = −Σ p_a`. Indicator terms
/// are zero; constant degradation terms are excluded.
pub fn schedule_objective(scenario: &Scenario, evb_power: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (evb, p) in scenario.evbs.iter().zip(evb_power) {
        total += evb.objective_weight * evb.objective.value(p);
    }
    let agg = eva_aggregates(scenario, evb_power);
    for (eva, a) in scenario.evas.iter().zip(&agg) {
        total += eva.objective_weight * eva.objective.value(a);
    }
    let pd = dno_from_aggregates(scenario, &agg);
    total + scenario.dno.objective_weight * scenario.dno.objective.value(&pd)
}

/// Stepwise HDEVCS solver.
pub struct HdevcsSolver<'s, E: Executor> {
    scenario: &'s Scenario,
    config: AdmmConfig,
    exec: E,
    state: EngineState,
    evb_cluster: Vec<usize>,
    evb_index: Vec<usize>,
    thresholds: (f64, f64),
    history: Vec<ResidualRecord>,
    subproblem_solves: usize,
    converged: bool,
}

impl<'s, E: Executor> HdevcsSolver<'s, E> {
    pub fn new(scenario: &'s Scenario, config: AdmmConfig, exec: E) -> Result<Self, EngineError> {
        Self::with_state(scenario, config, exec, EngineState::zeros(scenario))
    }

    /// Start from a given iterate, e.g. a shifted previous window.
    pub fn with_state(
        scenario: &'s Scenario,
        config: AdmmConfig,
        exec: E,
        state: EngineState,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        if !state.matches(scenario) {
            return Err(EngineError::StateMismatch);
        }
        let mut evb_cluster = vec![0; scenario.evbs.len()];
        for j in 0..scenario.evas.len() {
            for &i in scenario.members(j) {
                evb_cluster[i] = j;
            }
        }
        Ok(HdevcsSolver {
            scenario,
            thresholds: config.thresholds(scenario),
            config,
            exec,
            state,
            evb_cluster,
            evb_index: (0..scenario.evbs.len()).collect(),
            history: Vec::new(),
            subproblem_solves: 0,
            converged: false,
        })
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn history(&self) -> &[ResidualRecord] {
        &self.history
    }

    /// Resolved `(primal, dual)` stopping thresholds.
    pub fn thresholds(&self) -> (f64, f64) {
        self.thresholds
    }

    pub fn is_converged(&self) -> bool {
        self.converged
    }

    /// One sweep: parallel primal updates, then cluster averages and duals.
    pub fn step(&mut self) -> Result<&ResidualRecord, EngineError> {
        let sc = self.scenario;
        let rho = self.config.rho;
        let top = sc.evas.len();
        let st = &self.state;

        let evb_cluster = &self.evb_cluster;
        let evb_new = self.exec.map(&self.evb_index, |&i| {
            let omega = &st.clusters[evb_cluster[i]].broadcast;
            let anchor: Vec<f64> = st.evb_power[i].iter().zip(omega).map(|(p, o)| p - o).collect();
            prox_evb(&sc.evbs[i], &sc.grid, &anchor, rho)
        });
        let mut evb_power = Vec::with_capacity(evb_new.len());
        for (i, r) in evb_new.into_iter().enumerate() {
            evb_power.push(r.map_err(|source| EngineError::Subproblem {
                id: sc.evbs[i].id,
                source,
            })?);
        }

        let top_omega = &st.clusters[top].broadcast;
        let eva_index: Vec<usize> = (0..top).collect();
        let eva_power = self.exec.map(&eva_index, |&j| {
            if sc.members(j).is_empty() {
                return vec![0.0; sc.grid.horizon];
            }
            let own = &st.clusters[j].broadcast;
            let anchor: Vec<f64> = (0..sc.grid.horizon)
                .map(|t| st.eva_power[j][t] + 0.5 * (own[t] - top_omega[t]))
                .collect();
            prox_eva(&sc.evas[j], &sc.available_capacity(j).series, &anchor, rho)
        });

        let dno_anchor: Vec<f64> = st.dno_power.iter().zip(top_omega).map(|(p, o)| p - o).collect();
        let dno_power = prox_dno(
            &sc.dno.objective,
            sc.dno.objective_weight,
            &sc.dno.ev_capacity,
            &dno_anchor,
            rho,
        );

        let mut clusters = st.clusters.clone();
        let mut gap: f64 = 0.0;
        for (j, cluster) in clusters.iter_mut().enumerate() {
            let size = cluster.size() as f64;
            let sum: Vec<f64> = if j < top {
                let mut s: Vec<f64> = eva_power[j].iter().map(|v| -v).collect();
                for &i in sc.members(j) {
                    for (a, p) in s.iter_mut().zip(&evb_power[i]) {
                        *a += p;
                    }
                }
                s
            } else {
                let mut s = dno_power.clone();
                for p in &eva_power {
                    for (a, v) in s.iter_mut().zip(p) {
                        *a += v;
                    }
                }
                s
            };
            for t in 0..sum.len() {
                gap = gap.max(sum[t].abs());
                let avg = sum[t] / size;
                cluster.average[t] = avg;
                cluster.dual[t] += avg;
                cluster.broadcast[t] = avg + cluster.dual[t];
            }
        }

        let next = EngineState {
            iteration: st.iteration + 1,
            evb_power,
            eva_power,
            dno_power,
            clusters,
        };
        let residuals = compute_residuals(sc, &self.state, &next, rho);
        let sizes: Vec<usize> = next.clusters.iter().map(|c| c.size()).collect();
        let (primal, dual, cluster_primal, cluster_dual) =
            residuals.summarize(&sizes, |j| sc.members(j).to_vec(), self.config.residual_norm);
        let capacity_excess = capacity_violations(sc, &next.evb_power, 0.0)
            .iter()
            .fold(0.0, |m: f64, v| m.max(v.excess));
        let record = ResidualRecord {
            iteration: next.iteration,
            primal,
            dual,
            objective: schedule_objective(sc, &next.evb_power),
            equilibrium_gap: gap,
            capacity_excess,
            cluster_primal,
            cluster_dual,
        };
        self.subproblem_solves += sc.evbs.len() + top + 1;
        let (thp, thd) = self.thresholds;
        self.converged =
            primal <= thp && dual <= thd && gap <= thp && capacity_excess <= thp;
        log::debug!(
            "iteration {}: primal {:.3e} dual {:.3e} gap {:.3e}",
            record.iteration,
            primal,
            dual,
            gap
        );
        self.state = next;
        self.history.push(record);
        Ok(self.history.last().expect("record was just pushed"))
    }

    /// Iterate until the stopping rule holds or `max_iter` is reached.
    pub fn run(&mut self) -> Result<(), EngineError> {
        while !self.converged && self.state.iteration < self.config.max_iter {
            self.step()?;
        }
        Ok(())
    }

    pub fn into_result(self) -> ScheduleResult {
        let sc = self.scenario;
        let eva_aggregate = eva_aggregates(sc, &self.state.evb_power);
        let tol = self.thresholds.0;
        ScheduleResult {
            objective: schedule_objective(sc, &self.state.evb_power),
            violations: capacity_violations(sc, &self.state.evb_power, tol),
            iterations: self.state.iteration,
            evb_power: self.state.evb_power,
            eva_power: self.state.eva_power,
            eva_aggregate,
            dno_power: self.state.dno_power,
            history: self.history,
            converged: self.converged,
            wall_time: None,
            subproblem_solves: self.subproblem_solves,
            shortfalls: Vec::new(),
        }
    }

    /// Final iterate, for warm-starting a following solve.
    pub fn into_state(self) -> EngineState {
        self.state
    }
}

/// Run HDEVCS from a cold start.
pub fn solve<E: Executor>(
    scenario: &Scenario,
    config: AdmmConfig,
    exec: E,
) -> Result<ScheduleResult, EngineError> {
    let mut solver = HdevcsSolver::new(scenario, config, exec)?;
    solver.run()?;
    Ok(solver.into_result())
}
