//! Synthetic fleets: building netloads, prices and EV demands drawn from
//! truncated normal distributions with a fixed seed.

use std::f64::consts::PI;

use hdevcs_core::model::{
    BdrCoefficients, DnoSpec, EvaSpec, EvbSpec, ModelError, ObjectiveSpec, Scenario, TimeGrid,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("EV {id} cannot reach its target: needs {needed:.3} kWh, at most {reachable:.3} kWh deliverable")]
    Infeasible { id: u32, needed: f64, reachable: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Which agents pursue which objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveMode {
    /// DNO load variance, EVA feeder indicator, EV charging cost.
    Cr,
    /// DNO load variance, EVA charging cost, EV battery degradation.
    CrBdr,
    /// Random per-agent mix of charging cost and battery degradation.
    Mixed,
}

#[derive(Serialize, Deserialize)]
#[serde(remote = "BdrCoefficients")]
struct BdrDef {
    gamma1: f64,
    gamma2: f64,
    gamma3: f64,
}

/// Parameters of a synthetic fleet. Times of day are in hours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetGenParams {
    pub n_evas: usize,
    pub evs_per_eva: usize,
    pub horizon: usize,
    pub step_hours: f64,
    /// Clock time of step 0.
    pub start_hour: f64,
    pub initial_energy: (f64, f64),
    pub target_energy: (f64, f64),
    pub arrival: (f64, f64),
    pub departure: (f64, f64),
    /// Fraction of EVs using `arrival`/`departure` as given; the rest arrive in
    /// the departure window and leave in the arrival window.
    pub cohort_split: f64,
    pub p_min: f64,
    pub p_max: f64,
    /// One value per EVA, kW.
    pub feeder_capacity: Vec<f64>,
    /// Multiplier on the per-building netload profile.
    pub netload_scale: f64,
    pub objective: ObjectiveMode,
    pub cr_weight: f64,
    pub bdr_weight: f64,
    pub lvm_weight: f64,
    #[serde(with = "BdrDef")]
    pub bdr: BdrCoefficients,
    pub seed: u64,
}

pub const DEFAULT_BDR: BdrCoefficients = BdrCoefficients {
    gamma1: 0.0125,
    gamma2: 0.002,
    gamma3: 0.001,
};

impl FleetGenParams {
    /// 5 EVAs × 60 EVs over 24 h from noon at 30 min steps, 105 kW feeders.
    pub fn system1(seed: u64) -> Self {
        FleetGenParams {
            n_evas: 5,
            evs_per_eva: 60,
            horizon: 48,
            step_hours: 0.5,
            start_hour: 12.0,
            initial_energy: (8.0, 10.0),
            target_energy: (22.0, 25.0),
            arrival: (16.5, 20.5),
            departure: (6.0, 9.5),
            cohort_split: 1.0,
            p_min: 0.0,
            p_max: 4.0,
            feeder_capacity: vec![105.0; 5],
            netload_scale: 1.0,
            objective: ObjectiveMode::Cr,
            cr_weight: 1.0,
            bdr_weight: 1.0,
            lvm_weight: 1.0,
            bdr: DEFAULT_BDR,
            seed,
        }
    }

    /// 50 EVAs × 180 EVs over 30 h from 06:00, two commuting cohorts.
    /// Feeders of EVAs 6 and 11 carry 180 kW, the others 175 kW.
    pub fn system2(seed: u64) -> Self {
        let feeder_capacity = (1..=50)
            .map(|j| if j == 6 || j == 11 { 180.0 } else { 175.0 })
            .collect();
        FleetGenParams {
            n_evas: 50,
            evs_per_eva: 180,
            horizon: 60,
            start_hour: 6.0,
            cohort_split: 0.5,
            feeder_capacity,
            netload_scale: 0.8,
            ..Self::system1(seed)
        }
    }

    /// 2 EVAs × 3 EVs over 8 one-hour steps from 16:00.
    pub fn fixture(seed: u64) -> Self {
        FleetGenParams {
            n_evas: 2,
            evs_per_eva: 3,
            horizon: 8,
            step_hours: 1.0,
            start_hour: 16.0,
            initial_energy: (8.0, 10.0),
            target_energy: (14.0, 18.0),
            arrival: (16.0, 18.0),
            departure: (21.0, 24.0),
            feeder_capacity: vec![12.0; 2],
            ..Self::system1(seed)
        }
    }

    /// Narrow the arrival and departure windows so that EVs overlap with the
    /// evening netload peak.
    pub fn dense_arrival(mut self) -> Self {
        self.arrival = (18.5, 19.5);
        self.departure = (6.0, 6.5);
        self
    }

    pub fn with_objective(mut self, objective: ObjectiveMode) -> Self {
        self.objective = objective;
        if objective == ObjectiveMode::CrBdr {
            self.cr_weight = 10.0;
        }
        self
    }

    fn validate(&self) -> Result<(), GenerateError> {
        let bad = |m: &str| Err(GenerateError::Params(m.to_string()));
        for (name, (lo, hi)) in [
            ("initial energy", self.initial_energy),
            ("target energy", self.target_energy),
            ("arrival window", self.arrival),
            ("departure window", self.departure),
        ] {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return bad(&format!("{name} range is empty"));
            }
        }
        if self.n_evas == 0 {
            return bad("at least one EVA is required");
        }
        if self.feeder_capacity.len() != self.n_evas {
            return bad("one feeder capacity per EVA is required");
        }
        if !(0.0..=1.0).contains(&self.cohort_split) {
            return bad("cohort split must lie in [0, 1]");
        }
        if !(self.p_min <= self.p_max) || self.p_max <= 0.0 {
            return bad("charger limits must satisfy p_min <= p_max, p_max > 0");
        }
        if self.initial_energy.0 < 0.0 || self.initial_energy.1 > self.target_energy.0 {
            return bad("initial energy must be non-negative and below every target");
        }
        if self.netload_scale < 0.0 {
            return bad("netload scale must be non-negative");
        }
        Ok(())
    }
}

/// Draw from `N((a+b)/2, ((b−a)/4)²)` restricted to `[a, b]` by rejection.
pub fn truncated_normal<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        return lo;
    }
    let normal = Normal::new(0.5 * (lo + hi), 0.25 * (hi - lo)).expect("positive spread");
    loop {
        let x = normal.sample(rng);
        if (lo..=hi).contains(&x) {
            return x;
        }
    }
}

/// Signed distance on the 24 h clock, in `[-12, 12)`.
fn clock_offset(h: f64, center: f64) -> f64 {
    (h - center + 12.0).rem_euclid(24.0) - 12.0
}

fn bump(h: f64, center: f64, width: f64) -> f64 {
    let d = clock_offset(h, center) / width;
    (-d * d).exp()
}

fn daylight(h: f64) -> f64 {
    let h = h.rem_euclid(24.0);
    if (6.0..18.0).contains(&h) {
        (PI * (h - 6.0) / 12.0).sin()
    } else {
        0.0
    }
}

fn step_of(start_hour: f64, clock: f64, step_hours: f64) -> f64 {
    (clock - start_hour).rem_euclid(24.0) / step_hours
}

fn synthetic_price<R: Rng>(rng: &mut R, params: &FleetGenParams) -> Vec<f64> {
    let noise = Normal::new(0.0, 0.003).expect("positive spread");
    (0..params.horizon)
        .map(|t| {
            let h = params.start_hour + (t as f64 + 0.5) * params.step_hours;
            let p = 0.06 + 0.05 * bump(h, 19.0, 2.5) + 0.02 * bump(h, 8.0, 2.0)
                - 0.02 * daylight(h)
                + noise.sample(rng);
            p.max(0.01)
        })
        .collect()
}

fn synthetic_netload<R: Rng>(rng: &mut R, params: &FleetGenParams) -> Vec<f64> {
    let base = rng.random_range(0.15..0.35);
    let evening = rng.random_range(0.3..0.6);
    let morning = rng.random_range(0.1..0.3);
    let solar = if rng.random_bool(0.5) {
        rng.random_range(0.3..1.0)
    } else {
        0.0
    };
    let noise = Normal::new(0.0, 0.03).expect("positive spread");
    (0..params.horizon)
        .map(|t| {
            let h = params.start_hour + (t as f64 + 0.5) * params.step_hours;
            let d = base + evening * bump(h, 19.0, 2.0) + morning * bump(h, 7.5, 1.5)
                - solar * daylight(h)
                + noise.sample(rng);
            params.netload_scale * d
        })
        .collect()
}

fn bdr_objective(c: &BdrCoefficients) -> ObjectiveSpec {
    ObjectiveSpec::BdrQuadratic {
        gamma1: c.gamma1,
        gamma2: c.gamma2,
        gamma3: c.gamma3,
    }
}

/// Build a scenario from the parameters. Identical parameters (seed included)
/// give identical scenarios.
pub fn generate_fleet(params: &FleetGenParams) -> Result<Scenario, GenerateError> {
    params.validate()?;
    let grid = TimeGrid::new(0, params.horizon, params.step_hours)?;
    let n = params.horizon;
    let th = params.step_hours;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let price = synthetic_price(&mut rng, params);
    let cr = ObjectiveSpec::LinearPrice {
        price: price.clone(),
    };

    let total = params.n_evas * params.evs_per_eva;
    let night = (params.cohort_split * total as f64).round() as usize;
    let mut evbs = Vec::with_capacity(total);
    for k in 0..total {
        let id = k as u32;
        let eva_id = (k / params.evs_per_eva) as u32 + 1;
        // Interleave cohorts so every EVA holds both.
        let first_cohort = (k * night) / total.max(1) != ((k + 1) * night) / total.max(1);
        let (arr_win, dep_win) = if first_cohort {
            (params.arrival, params.departure)
        } else {
            (params.departure, params.arrival)
        };
        let c0 = truncated_normal(&mut rng, params.initial_energy);
        let target = truncated_normal(&mut rng, params.target_energy);
        let arr = step_of(params.start_hour, truncated_normal(&mut rng, arr_win), th);
        let mut dep = step_of(params.start_hour, truncated_normal(&mut rng, dep_win), th);
        if dep <= arr {
            dep += 24.0 / th;
        }
        let arrival_step = arr.round() as usize;
        let departure_step = (dep.round() as usize).max(arrival_step + 1);
        if departure_step > n {
            return Err(GenerateError::Params(format!(
                "EV {id} departs at step {departure_step}, beyond the {n}-step horizon"
            )));
        }
        let reachable = params.p_max * th * (departure_step - arrival_step) as f64;
        if target - c0 > reachable {
            return Err(GenerateError::Infeasible {
                id,
                needed: target - c0,
                reachable,
            });
        }
        let netload = synthetic_netload(&mut rng, params);
        let (objective, objective_weight) = match params.objective {
            ObjectiveMode::Cr => (cr.clone(), params.cr_weight),
            ObjectiveMode::CrBdr => (bdr_objective(&params.bdr), params.bdr_weight),
            ObjectiveMode::Mixed => {
                if rng.random_bool(0.5) {
                    (cr.clone(), params.cr_weight)
                } else {
                    (bdr_objective(&params.bdr), params.bdr_weight)
                }
            }
        };
        evbs.push(EvbSpec {
            id,
            eva_id,
            p_min: vec![params.p_min; n],
            p_max: vec![params.p_max; n],
            battery_capacity: target,
            initial_energy: c0,
            arrival_step,
            departure_step,
            netload,
            objective,
            objective_weight,
        });
    }

    let mut evas = Vec::with_capacity(params.n_evas);
    for (j, cap) in params.feeder_capacity.iter().enumerate() {
        let (objective, objective_weight) = match params.objective {
            ObjectiveMode::Cr => (ObjectiveSpec::FeederIndicator, 1.0),
            ObjectiveMode::CrBdr => (cr.clone(), params.cr_weight),
            ObjectiveMode::Mixed => match rng.random_range(0..3) {
                0 => (ObjectiveSpec::FeederIndicator, 1.0),
                1 => (cr.clone(), params.cr_weight),
                _ => (bdr_objective(&params.bdr), params.bdr_weight),
            },
        };
        evas.push(EvaSpec {
            id: j as u32 + 1,
            feeder_capacity: vec![*cap; n],
            objective,
            objective_weight,
        });
    }

    // The grid limit equals the summed feeder headroom, so it never binds
    // before a feeder does.
    let mut ev_capacity = vec![0.0; n];
    for t in 0..n {
        let feeders: f64 = params.feeder_capacity.iter().sum();
        let netload: f64 = evbs.iter().map(|e| e.netload[t]).sum();
        ev_capacity[t] = (feeders - netload).max(0.0);
    }
    let dno = DnoSpec {
        ev_capacity,
        objective: ObjectiveSpec::Lvm {
            target: 0.0,
            total_netload: Vec::new(),
        },
        objective_weight: params.lvm_weight,
    };
    Ok(Scenario::new(grid, dno, evas, evbs, price, params.bdr)?)
}
