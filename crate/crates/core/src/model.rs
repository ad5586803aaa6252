//! Physical model of the charging infrastructure: EV+building units (EVBs),
//! aggregators (EVAs) and the distribution network operator (DNO).
//!
//! All power series are per-step samples in kW, held constant within a step;
//! energies are in kWh and the step length is in hours.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

/// Errors raised while validating model inputs.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid time grid: {0}")]
    Grid(&'static str),
    #[error("{what} has length {got}, expected {expected}")]
    Length {
        what: String,
        got: usize,
        expected: usize,
    },
    #[error("EVB {id}: {reason}")]
    Evb { id: u32, reason: String },
    #[error("EVB {id}: demand {demand} kWh exceeds reachable {reachable} kWh before departure")]
    Unreachable { id: u32, demand: f64, reachable: f64 },
    #[error("EVA {id}: {reason}")]
    Eva { id: u32, reason: String },
    #[error("DNO: {0}")]
    Dno(String),
    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: u32 },
    #[error("EVB {evb} references unknown EVA {eva}")]
    UnknownEva { evb: u32, eva: u32 },
}

/// Discretization of the scheduling horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    /// Absolute index of the first step.
    pub t0: usize,
    /// Number of steps in the horizon.
    pub horizon: usize,
    /// Step duration in hours, `0 < step_hours <= 1`.
    pub step_hours: f64,
}

impl TimeGrid {
    pub fn new(t0: usize, horizon: usize, step_hours: f64) -> Result<Self, ModelError> {
        let grid = TimeGrid {
            t0,
            horizon,
            step_hours,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.horizon == 0 {
            return Err(ModelError::Grid("horizon must be at least one step"));
        }
        if !(self.step_hours > 0.0 && self.step_hours <= 1.0) {
            return Err(ModelError::Grid("step duration must lie in (0, 1] hours"));
        }
        Ok(())
    }
}

/// Coefficients of the battery degradation model `γ1·p² + γ2·p + γ3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BdrCoefficients {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
}

/// Convex objective attached to an agent. Weights live on the agent spec.
#[derive(Debug, Clone, PartialEq)]
pub enum ObjectiveSpec {
    /// Charging cost `Π·p` for a price series in $/kWh.
    LinearPrice { price: Vec<f64> },
    /// Battery degradation `γ1·p² + γ2·p + γ3` per step. `γ3` is constant and
    /// does not enter the optimization.
    BdrQuadratic {
        gamma1: f64,
        gamma2: f64,
        gamma3: f64,
    },
    /// Feasibility only: the feeder capacity constraint is the whole objective.
    FeederIndicator,
    /// Load-variance minimization `‖(D − p_d) − Ē‖²` on the DNO variable.
    Lvm { target: f64, total_netload: Vec<f64> },
    /// Charge at the constant rate that meets the target exactly at departure.
    ConstantPower,
}

impl ObjectiveSpec {
    /// The objective restricted to steps `from..from + len`. LVM data is
    /// cleared; `Scenario::new` rebuilds it for the DNO.
    pub fn slice(&self, from: usize, len: usize) -> ObjectiveSpec {
        match self {
            ObjectiveSpec::LinearPrice { price } => ObjectiveSpec::LinearPrice {
                price: price[from..from + len].to_vec(),
            },
            ObjectiveSpec::Lvm { .. } => ObjectiveSpec::Lvm {
                target: 0.0,
                total_netload: Vec::new(),
            },
            other => other.clone(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ObjectiveSpec::LinearPrice { .. } => "linear_price",
            ObjectiveSpec::BdrQuadratic { .. } => "bdr_quadratic",
            ObjectiveSpec::FeederIndicator => "feeder_indicator",
            ObjectiveSpec::Lvm { .. } => "lvm",
            ObjectiveSpec::ConstantPower => "constant_power",
        }
    }

    /// Unweighted objective value of `p`. Indicator-style objectives evaluate
    /// to zero; their constraints are checked elsewhere.
    pub fn value(&self, p: &[f64]) -> f64 {
        match self {
            ObjectiveSpec::LinearPrice { price } => {
                price.iter().zip(p).map(|(pi, x)| pi * x).sum()
            }
            ObjectiveSpec::BdrQuadratic { gamma1, gamma2, .. } => {
                p.iter().map(|x| gamma1 * x * x + gamma2 * x).sum()
            }
            ObjectiveSpec::Lvm {
                target,
                total_netload,
            } => total_netload
                .iter()
                .zip(p)
                .map(|(d, pd)| {
                    let dev = d - pd - target;
                    dev * dev
                })
                .sum(),
            ObjectiveSpec::FeederIndicator | ObjectiveSpec::ConstantPower => 0.0,
        }
    }

    fn check_len(&self, n: usize, owner: &str) -> Result<(), ModelError> {
        let len = match self {
            ObjectiveSpec::LinearPrice { price } => price.len(),
            ObjectiveSpec::Lvm { total_netload, .. } => total_netload.len(),
            _ => return Ok(()),
        };
        if len != n {
            return Err(ModelError::Length {
                what: alloc::format!("{owner} objective series"),
                got: len,
                expected: n,
            });
        }
        Ok(())
    }
}

/// One EV and the building hosting its charger.
#[derive(Debug, Clone, PartialEq)]
pub struct EvbSpec {
    pub id: u32,
    pub eva_id: u32,
    /// Charger minimum power per step, negative when V2G-capable.
    pub p_min: Vec<f64>,
    /// Charger maximum power per step.
    pub p_max: Vec<f64>,
    /// Energy required at departure (the battery is "full" at this level), kWh.
    pub battery_capacity: f64,
    /// Energy stored at plug-in, kWh.
    pub initial_energy: f64,
    pub arrival_step: usize,
    pub departure_step: usize,
    /// Building netload (demand minus solar) per step.
    pub netload: Vec<f64>,
    pub objective: ObjectiveSpec,
    pub objective_weight: f64,
}

impl EvbSpec {
    /// Whether the EV is connected to its charger during step `t`.
    pub fn is_plugged(&self, t: usize) -> bool {
        self.arrival_step <= t && t < self.departure_step
    }

    /// Power box in effect at step `t`: the charger limits while plugged, zero otherwise.
    pub fn power_box(&self, t: usize) -> (f64, f64) {
        if self.is_plugged(t) {
            (self.p_min[t], self.p_max[t])
        } else {
            (0.0, 0.0)
        }
    }

    /// Absolute bounds on the stored energy after `t` steps of the horizon
    /// (`t = 0` is the initial state). Before arrival the battery is not
    /// connected, so no energy can be exchanged and it stays at its initial level.
    pub fn energy_bounds(&self, t: usize) -> (f64, f64) {
        if t < self.arrival_step {
            (self.initial_energy, self.initial_energy)
        } else {
            battery_bounds(self, t)
        }
    }

    /// Number of plugged steps that fall inside a horizon of `n` steps.
    pub fn plugged_steps(&self, n: usize) -> usize {
        self.departure_step.min(n).saturating_sub(self.arrival_step)
    }

    /// Energy still required at departure.
    pub fn energy_demand(&self) -> f64 {
        self.battery_capacity - self.initial_energy
    }

    /// Constant rate that meets the target exactly at departure.
    pub fn constant_rate(&self, step_hours: f64) -> f64 {
        let steps = self.departure_step.saturating_sub(self.arrival_step);
        if steps == 0 {
            return 0.0;
        }
        self.energy_demand() / (step_hours * steps as f64)
    }

    pub fn validate(&self, grid: &TimeGrid) -> Result<(), ModelError> {
        let n = grid.horizon;
        let err = |reason: String| ModelError::Evb {
            id: self.id,
            reason,
        };
        for (what, s) in [
            ("p_min", &self.p_min),
            ("p_max", &self.p_max),
            ("netload", &self.netload),
        ] {
            if s.len() != n {
                return Err(ModelError::Length {
                    what: alloc::format!("EVB {} {what}", self.id),
                    got: s.len(),
                    expected: n,
                });
            }
        }
        self.objective.check_len(n, "EVB")?;
        if !(self.initial_energy >= 0.0 && self.initial_energy <= self.battery_capacity) {
            return Err(err(alloc::format!(
                "initial energy {} outside [0, {}]",
                self.initial_energy,
                self.battery_capacity
            )));
        }
        if self.arrival_step >= self.departure_step {
            return Err(err("arrival must precede departure".into()));
        }
        if let Some(t) = (0..n).find(|&t| self.p_min[t] > self.p_max[t]) {
            return Err(err(alloc::format!("p_min exceeds p_max at step {t}")));
        }
        if !(self.objective_weight >= 0.0) {
            return Err(err("objective weight must be non-negative".into()));
        }
        if let ObjectiveSpec::BdrQuadratic { gamma1, .. } = self.objective {
            if gamma1 < 0.0 {
                return Err(err("BDR gamma1 must be non-negative".into()));
            }
        }
        // A departure beyond the horizon carries no terminal requirement here.
        if self.departure_step <= n {
            let reachable: f64 = (self.arrival_step..self.departure_step)
                .map(|t| self.p_max[t])
                .sum::<f64>()
                * grid.step_hours;
            let demand = self.energy_demand();
            if demand > reachable + 1e-9 * (1.0 + demand.abs()) {
                return Err(ModelError::Unreachable {
                    id: self.id,
                    demand,
                    reachable,
                });
            }
        }
        Ok(())
    }
}

/// An aggregator and the feeder it manages.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaSpec {
    pub id: u32,
    pub feeder_capacity: Vec<f64>,
    pub objective: ObjectiveSpec,
    pub objective_weight: f64,
}

/// The distribution network operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DnoSpec {
    /// Maximum total EV charging power the grid can host, per step.
    pub ev_capacity: Vec<f64>,
    pub objective: ObjectiveSpec,
    pub objective_weight: f64,
}

/// Battery bounds `(C_lo, C_hi)` at step `t`:
/// not plugged yet gives `(0, 0)`, plugged gives `(0, C)`, and from the
/// departure step on the battery must be full, `(C, C)`.
pub fn battery_bounds(spec: &EvbSpec, t: usize) -> (f64, f64) {
    let c = spec.battery_capacity;
    if t >= spec.departure_step {
        (c, c)
    } else if t >= spec.arrival_step {
        (0.0, c)
    } else {
        (0.0, 0.0)
    }
}

/// Energy trajectory `c(0..=N)` produced by charging with `p` from `c0`.
pub fn energy_trajectory(initial_energy: f64, step_hours: f64, p: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(p.len() + 1);
    let mut c = initial_energy;
    out.push(c);
    for x in p {
        c += step_hours * x;
        out.push(c);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ViolationKind {
    PowerBelowMin,
    PowerAboveMax,
    EnergyBelowMin,
    EnergyAboveMax,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub step: usize,
    pub kind: ViolationKind,
    pub amount: f64,
}

/// Result of [`feasible_set_check`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeasibilityReport {
    pub violations: Vec<Violation>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn first_violation(&self) -> Option<&Violation> {
        self.violations.first()
    }
}

/// Check a charging trajectory against the charger and battery constraints.
/// Energy violations are reported at the step whose charging produced them.
pub fn feasible_set_check(
    spec: &EvbSpec,
    grid: &TimeGrid,
    p: &[f64],
    tol: f64,
) -> Result<FeasibilityReport, ModelError> {
    if p.len() != grid.horizon {
        return Err(ModelError::Length {
            what: alloc::format!("trajectory for EVB {}", spec.id),
            got: p.len(),
            expected: grid.horizon,
        });
    }
    let mut report = FeasibilityReport::default();
    let energy = energy_trajectory(spec.initial_energy, grid.step_hours, p);
    for (t, &x) in p.iter().enumerate() {
        let (lo, hi) = spec.power_box(t);
        if x < lo - tol {
            report.violations.push(Violation {
                step: t,
                kind: ViolationKind::PowerBelowMin,
                amount: lo - x,
            });
        }
        if x > hi + tol {
            report.violations.push(Violation {
                step: t,
                kind: ViolationKind::PowerAboveMax,
                amount: x - hi,
            });
        }
        let (elo, ehi) = spec.energy_bounds(t + 1);
        let c = energy[t + 1];
        if c < elo - tol {
            report.violations.push(Violation {
                step: t,
                kind: ViolationKind::EnergyBelowMin,
                amount: elo - c,
            });
        }
        if c > ehi + tol {
            report.violations.push(Violation {
                step: t,
                kind: ViolationKind::EnergyAboveMax,
                amount: c - ehi,
            });
        }
    }
    Ok(report)
}

/// Feeder capacity left for EV charging, `P̄_j − Σ d`.
#[derive(Debug, Clone, PartialEq)]
pub struct AvailableCapacity {
    pub series: Vec<f64>,
    /// Steps where the netload alone exceeds the feeder.
    pub negative_steps: Vec<usize>,
}

impl AvailableCapacity {
    pub fn has_warning(&self) -> bool {
        !self.negative_steps.is_empty()
    }
}

pub fn eva_available_capacity(eva: &EvaSpec, member_netloads: &[&[f64]]) -> AvailableCapacity {
    let mut series = eva.feeder_capacity.clone();
    for d in member_netloads {
        for (s, x) in series.iter_mut().zip(d.iter()) {
            *s -= x;
        }
    }
    let negative_steps: Vec<usize> = series
        .iter()
        .enumerate()
        .filter(|(_, v)| **v < 0.0)
        .map(|(t, _)| t)
        .collect();
    if !negative_steps.is_empty() {
        log::warn!(
            "EVA {}: netload exceeds feeder capacity at {} step(s)",
            eva.id,
            negative_steps.len()
        );
    }
    AvailableCapacity {
        series,
        negative_steps,
    }
}

/// Identifies an agent of the infrastructure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AgentRef {
    Evb(u32),
    Eva(u32),
    Dno,
}

/// A validated scheduling problem. EVAs and EVBs are kept sorted by id, which
/// fixes the aggregation order of every solver.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub grid: TimeGrid,
    pub dno: DnoSpec,
    pub evas: Vec<EvaSpec>,
    pub evbs: Vec<EvbSpec>,
    /// Wholesale price used for cost reporting, $/kWh.
    pub price: Vec<f64>,
    /// Degradation coefficients used for cost reporting.
    pub bdr: BdrCoefficients,
    members: Vec<Vec<usize>>,
    eva_capacity: Vec<AvailableCapacity>,
}

impl Scenario {
    /// Validate and index a scenario. An LVM objective on the DNO has its
    /// aggregate netload and target (the horizon average) recomputed here.
    pub fn new(
        grid: TimeGrid,
        mut dno: DnoSpec,
        mut evas: Vec<EvaSpec>,
        mut evbs: Vec<EvbSpec>,
        price: Vec<f64>,
        bdr: BdrCoefficients,
    ) -> Result<Self, ModelError> {
        grid.validate()?;
        let n = grid.horizon;
        evas.sort_by_key(|e| e.id);
        evbs.sort_by_key(|e| e.id);
        for w in evas.windows(2) {
            if w[0].id == w[1].id {
                return Err(ModelError::DuplicateId {
                    kind: "EVA",
                    id: w[0].id,
                });
            }
        }
        for w in evbs.windows(2) {
            if w[0].id == w[1].id {
                return Err(ModelError::DuplicateId {
                    kind: "EVB",
                    id: w[0].id,
                });
            }
        }
        if price.len() != n {
            return Err(ModelError::Length {
                what: "price".into(),
                got: price.len(),
                expected: n,
            });
        }
        for eva in &evas {
            if eva.feeder_capacity.len() != n {
                return Err(ModelError::Length {
                    what: alloc::format!("EVA {} feeder capacity", eva.id),
                    got: eva.feeder_capacity.len(),
                    expected: n,
                });
            }
            if let Some(t) = eva.feeder_capacity.iter().position(|c| !(*c > 0.0)) {
                return Err(ModelError::Eva {
                    id: eva.id,
                    reason: alloc::format!("feeder capacity must be positive (step {t})"),
                });
            }
            eva.objective.check_len(n, "EVA")?;
            if matches!(eva.objective, ObjectiveSpec::Lvm { .. } | ObjectiveSpec::ConstantPower)
            {
                return Err(ModelError::Eva {
                    id: eva.id,
                    reason: alloc::format!("unsupported objective {}", eva.objective.kind()),
                });
            }
            if !(eva.objective_weight >= 0.0) {
                return Err(ModelError::Eva {
                    id: eva.id,
                    reason: "objective weight must be non-negative".into(),
                });
            }
        }
        let mut members = vec![Vec::new(); evas.len()];
        for (i, evb) in evbs.iter().enumerate() {
            evb.validate(&grid)?;
            if matches!(evb.objective, ObjectiveSpec::Lvm { .. } | ObjectiveSpec::FeederIndicator)
            {
                return Err(ModelError::Evb {
                    id: evb.id,
                    reason: alloc::format!("unsupported objective {}", evb.objective.kind()),
                });
            }
            let j = evas
                .binary_search_by_key(&evb.eva_id, |e| e.id)
                .map_err(|_| ModelError::UnknownEva {
                    evb: evb.id,
                    eva: evb.eva_id,
                })?;
            members[j].push(i);
        }
        if dno.ev_capacity.len() != n {
            return Err(ModelError::Length {
                what: "DNO EV capacity".into(),
                got: dno.ev_capacity.len(),
                expected: n,
            });
        }
        if let Some(t) = dno.ev_capacity.iter().position(|c| !(*c >= 0.0)) {
            return Err(ModelError::Dno(alloc::format!(
                "EV capacity must be non-negative (step {t})"
            )));
        }
        if !(dno.objective_weight >= 0.0) {
            return Err(ModelError::Dno("objective weight must be non-negative".into()));
        }
        match dno.objective {
            ObjectiveSpec::Lvm { .. } => {
                let mut total = vec![0.0; n];
                for evb in &evbs {
                    for (s, d) in total.iter_mut().zip(&evb.netload) {
                        *s += d;
                    }
                }
                let target = total.iter().sum::<f64>() / n as f64;
                dno.objective = ObjectiveSpec::Lvm {
                    target,
                    total_netload: total,
                };
            }
            ObjectiveSpec::FeederIndicator | ObjectiveSpec::LinearPrice { .. } => {
                dno.objective.check_len(n, "DNO")?;
            }
            _ => {
                return Err(ModelError::Dno(alloc::format!(
                    "unsupported objective {}",
                    dno.objective.kind()
                )))
            }
        }
        let eva_capacity = evas
            .iter()
            .zip(&members)
            .map(|(eva, m)| {
                let loads: Vec<&[f64]> = m.iter().map(|&i| evbs[i].netload.as_slice()).collect();
                eva_available_capacity(eva, &loads)
            })
            .collect();
        Ok(Scenario {
            grid,
            dno,
            evas,
            evbs,
            price,
            bdr,
            members,
            eva_capacity,
        })
    }

    /// The first `len` steps of the scenario. EVs departing later keep
    /// their departure step and lose the terminal requirement.
    pub fn truncated(&self, len: usize) -> Result<Scenario, ModelError> {
        let n = self.grid.horizon;
        if len == 0 || len > n {
            return Err(ModelError::Length {
                what: "truncated horizon".into(),
                got: len,
                expected: n,
            });
        }
        let cut = |v: &[f64]| v[..len].to_vec();
        let evbs = self
            .evbs
            .iter()
            .map(|e| EvbSpec {
                p_min: cut(&e.p_min),
                p_max: cut(&e.p_max),
                netload: cut(&e.netload),
                objective: e.objective.slice(0, len),
                ..e.clone()
            })
            .collect();
        let evas = self
            .evas
            .iter()
            .map(|e| EvaSpec {
                feeder_capacity: cut(&e.feeder_capacity),
                objective: e.objective.slice(0, len),
                ..e.clone()
            })
            .collect();
        let dno = DnoSpec {
            ev_capacity: cut(&self.dno.ev_capacity),
            objective: self.dno.objective.slice(0, len),
            objective_weight: self.dno.objective_weight,
        };
        Scenario::new(
            TimeGrid::new(self.grid.t0, len, self.grid.step_hours)?,
            dno,
            evas,
            evbs,
            cut(&self.price),
            self.bdr,
        )
    }

    /// Indices into `evbs` of the EVBs supplied by the EVA at `eva_index`.
    pub fn members(&self, eva_index: usize) -> &[usize] {
        &self.members[eva_index]
    }

    /// Available EV capacity `P̄_a` of the EVA at `eva_index`.
    pub fn available_capacity(&self, eva_index: usize) -> &AvailableCapacity {
        &self.eva_capacity[eva_index]
    }

    pub fn eva_index(&self, id: u32) -> Option<usize> {
        self.evas.binary_search_by_key(&id, |e| e.id).ok()
    }

    pub fn evb_index(&self, id: u32) -> Option<usize> {
        self.evbs.binary_search_by_key(&id, |e| e.id).ok()
    }

    /// Aggregate netload `Σ d` over all EVBs.
    pub fn total_netload(&self) -> Vec<f64> {
        let mut total = vec![0.0; self.grid.horizon];
        for evb in &self.evbs {
            for (s, d) in total.iter_mut().zip(&evb.netload) {
                *s += d;
            }
        }
        total
    }

    /// Horizon average of the aggregate netload, `Ē`.
    pub fn netload_average(&self) -> f64 {
        self.total_netload().iter().sum::<f64>() / self.grid.horizon as f64
    }

    /// Number of agents: EVBs, EVAs and the DNO.
    pub fn agent_count(&self) -> usize {
        self.evbs.len() + self.evas.len() + 1
    }

    pub fn with_objective(&self, agent: AgentRef, objective: ObjectiveSpec) -> Option<Scenario> {
        let mut s = self.clone();
        match agent {
            AgentRef::Evb(id) => s.evbs[self.evb_index(id)?].objective = objective,
            AgentRef::Eva(id) => s.evas[self.eva_index(id)?].objective = objective,
            AgentRef::Dno => s.dno.objective = objective,
        }
        Some(s)
    }
}

/// A step at which some aggregate exceeds its capacity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacityViolation {
    /// `AgentRef::Eva` for a feeder, `AgentRef::Dno` for the grid limit.
    pub agent: AgentRef,
    pub step: usize,
    pub excess: f64,
}

/// Check the feeder constraints `Σ p_v ≤ P̄_a` and the grid constraint
/// `Σ p_v ≤ P̄_d` for a set of EVB trajectories (indexed like `scenario.evbs`).
pub fn capacity_violations(
    scenario: &Scenario,
    evb_power: &[Vec<f64>],
    tol: f64,
) -> Vec<CapacityViolation> {
    let n = scenario.grid.horizon;
    let mut out = Vec::new();
    let mut grand = vec![0.0; n];
    for (j, eva) in scenario.evas.iter().enumerate() {
        let cap = &scenario.available_capacity(j).series;
        let mut agg = vec![0.0; n];
        for &i in scenario.members(j) {
            for (a, p) in agg.iter_mut().zip(&evb_power[i]) {
                *a += p;
            }
        }
        for t in 0..n {
            grand[t] += agg[t];
            if agg[t] > cap[t] + tol {
                out.push(CapacityViolation {
                    agent: AgentRef::Eva(eva.id),
                    step: t,
                    excess: agg[t] - cap[t],
                });
            }
        }
    }
    for t in 0..n {
        if grand[t] > scenario.dno.ev_capacity[t] + tol {
            out.push(CapacityViolation {
                agent: AgentRef::Dno,
                step: t,
                excess: grand[t] - scenario.dno.ev_capacity[t],
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, th: f64) -> TimeGrid {
        TimeGrid::new(0, n, th).unwrap()
    }

    fn evb(n: usize, arrival: usize, departure: usize, c0: f64, cap: f64) -> EvbSpec {
        EvbSpec {
            id: 1,
            eva_id: 1,
            p_min: vec![0.0; n],
            p_max: vec![4.0; n],
            battery_capacity: cap,
            initial_energy: c0,
            arrival_step: arrival,
            departure_step: departure,
            netload: vec![0.0; n],
            objective: ObjectiveSpec::BdrQuadratic {
                gamma1: 1.0,
                gamma2: 0.0,
                gamma3: 0.0,
            },
            objective_weight: 1.0,
        }
    }

    #[test]
    fn bounds_follow_plug_state() {
        let s = evb(10, 3, 8, 10.0, 24.0);
        assert_eq!(battery_bounds(&s, 1), (0.0, 0.0));
        assert_eq!(battery_bounds(&s, 4), (0.0, 24.0));
        assert_eq!(battery_bounds(&s, 8), (24.0, 24.0));
        assert_eq!(battery_bounds(&s, 9), (24.0, 24.0));
        for t in 0..12 {
            let (lo, hi) = battery_bounds(&s, t);
            assert!(lo <= hi);
        }
    }

    #[test]
    fn absent_ev_zero_trajectory_is_feasible() {
        let g = grid(6, 0.5);
        let s = evb(6, 10, 12, 5.0, 20.0);
        let r = feasible_set_check(&s, &g, &[0.0; 6], 1e-9).unwrap();
        assert!(r.is_feasible());
    }

    #[test]
    fn power_above_max_is_reported_at_its_step() {
        let g = grid(6, 0.5);
        let s = evb(6, 0, 6, 10.0, 12.0);
        let p = [0.0, 5.0, 0.0, 0.0, 0.0, -1.0];
        let r = feasible_set_check(&s, &g, &p, 1e-9).unwrap();
        assert!(!r.is_feasible());
        let v = r.first_violation().unwrap();
        assert_eq!(v.step, 1);
        assert_eq!(v.kind, ViolationKind::PowerAboveMax);
    }

    #[test]
    fn uniform_charging_over_availability_is_feasible() {
        // 14 kWh over steps 2..9 (7 steps) at T_h = 0.5.
        let g = grid(12, 0.5);
        let s = evb(12, 2, 9, 10.0, 24.0);
        let rate = 14.0 / (0.5 * 7.0);
        let p: Vec<f64> = (0..12).map(|t| if (2..9).contains(&t) { rate } else { 0.0 }).collect();
        let energy = energy_trajectory(10.0, 0.5, &p);
        // direct evaluation of the cumulative sums
        let mut c = 10.0;
        for t in 0..12 {
            c += 0.5 * p[t];
            assert!((energy[t + 1] - c).abs() < 1e-12);
        }
        assert!((energy[12] - 24.0).abs() < 1e-12);
        assert!(feasible_set_check(&s, &g, &p, 1e-9).unwrap().is_feasible());
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let g = grid(6, 0.5);
        let s = evb(6, 0, 6, 10.0, 12.0);
        assert!(feasible_set_check(&s, &g, &[0.0; 5], 1e-9).is_err());
    }

    #[test]
    fn available_capacity_subtracts_netload() {
        let eva = EvaSpec {
            id: 0,
            feeder_capacity: vec![105.0; 4],
            objective: ObjectiveSpec::FeederIndicator,
            objective_weight: 1.0,
        };
        let a = [25.0; 4];
        let b = [15.0; 4];
        let cap = eva_available_capacity(&eva, &[&a, &b]);
        assert_eq!(cap.series, vec![65.0; 4]);
        assert!(!cap.has_warning());
        let c = [70.0; 4];
        let cap = eva_available_capacity(&eva, &[&a, &b, &c]);
        assert_eq!(cap.series, vec![-5.0; 4]);
        assert!(cap.has_warning());
    }

    #[test]
    fn infeasible_demand_is_rejected() {
        let g = grid(8, 0.5);
        // 2 steps * 4 kW * 0.5 h = 4 kWh < 10 kWh required
        let s = evb(8, 2, 4, 10.0, 20.0);
        assert!(matches!(s.validate(&g), Err(ModelError::Unreachable { .. })));
    }

    #[test]
    fn scenario_rejects_unknown_eva() {
        let g = grid(4, 1.0);
        let dno = DnoSpec {
            ev_capacity: vec![100.0; 4],
            objective: ObjectiveSpec::Lvm {
                target: 0.0,
                total_netload: Vec::new(),
            },
            objective_weight: 1.0,
        };
        let mut e = evb(4, 0, 4, 0.0, 4.0);
        e.eva_id = 9;
        let err = Scenario::new(
            g,
            dno,
            Vec::new(),
            vec![e],
            vec![0.1; 4],
            BdrCoefficients {
                gamma1: 0.0,
                gamma2: 0.0,
                gamma3: 0.0,
            },
        )
        .unwrap_err();
        assert_eq!(err, ModelError::UnknownEva { evb: 1, eva: 9 });
    }

    proptest::proptest! {
        #[test]
        fn dynamics_are_consistent(c0 in 0.0f64..30.0, th in 0.05f64..1.0,
                                   p in proptest::collection::vec(-4.0f64..4.0, 1..40)) {
            let c = energy_trajectory(c0, th, &p);
            for t in 0..p.len() {
                let expect = c[t] + th * p[t];
                proptest::prop_assert!((c[t + 1] - expect).abs() <= 1e-9 * (1.0 + expect.abs()));
            }
        }

        #[test]
        fn bounds_are_ordered(a in 0usize..20, len in 1usize..20, t in 0usize..50, cap in 0.0f64..80.0) {
            let s = evb(60, a, a + len, 0.0, cap);
            let (lo, hi) = battery_bounds(&s, t);
            proptest::prop_assert!(lo <= hi);
        }
    }
}
