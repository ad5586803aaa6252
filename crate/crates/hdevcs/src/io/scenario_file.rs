//! Scenario bundle: a directory holding `manifest.json` and per-step CSVs.
//!
//! ```text
//! manifest.json   schema_version, grid, degradation coefficients, agent
//!                 scalars and objectives, optional generation parameters and
//!                 receding-horizon settings
//! netload.csv     building_id,step,kw
//! chargers.csv    building_id,step,p_min,p_max
//! feeders.csv     eva_id,step,kw
//! dno.csv         step,ev_capacity
//! price.csv       step,price
//! ```
//!
//! Objectives are stored by name. `linear_price` refers to `price.csv` and
//! `bdr_quadratic` to the manifest coefficients.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use hdevcs_core::model::{
    AgentRef, BdrCoefficients, DnoSpec, EvaSpec, EvbSpec, ObjectiveSpec, Scenario, TimeGrid,
};
use hdevcs_core::rh::{PnpEvent, RhConfig};
use serde::{Deserialize, Serialize};

use super::{create, open, IoError, Rows, SeriesTable};
use crate::generate::FleetGenParams;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridDoc {
    pub t0: usize,
    pub horizon: usize,
    pub step_hours: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BdrDoc {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentObjective {
    pub objective: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaDoc {
    pub id: u32,
    #[serde(flatten)]
    pub objective: AgentObjective,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvbDoc {
    pub id: u32,
    pub eva_id: u32,
    pub battery_capacity: f64,
    pub initial_energy: f64,
    pub arrival_step: usize,
    pub departure_step: usize,
    #[serde(flatten)]
    pub objective: AgentObjective,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventDoc {
    pub step: usize,
    /// `evb:<id>`, `eva:<id>` or `dno`.
    pub agent: String,
    pub objective: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhDoc {
    pub window: usize,
    pub total_steps: usize,
    #[serde(default = "default_true")]
    pub warm_start: bool,
    #[serde(default)]
    pub events: Vec<EventDoc>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub grid: GridDoc,
    pub seed: Option<u64>,
    pub generation: Option<FleetGenParams>,
    pub bdr: BdrDoc,
    pub dno: AgentObjective,
    pub evas: Vec<EvaDoc>,
    pub evbs: Vec<EvbDoc>,
    pub rh: Option<RhDoc>,
}

/// A scenario together with how it was produced and how to run it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFile {
    pub scenario: Scenario,
    pub seed: Option<u64>,
    pub generation: Option<FleetGenParams>,
    pub rh: Option<RhDoc>,
}

pub fn objective_name(obj: &ObjectiveSpec, price: &[f64], bdr: &BdrCoefficients) -> Result<&'static str, IoError> {
    match obj {
        ObjectiveSpec::LinearPrice { price: p } if p.as_slice() != price => Err(IoError::Manifest(
            "per-agent price series differ from the scenario price; not representable".into(),
        )),
        ObjectiveSpec::BdrQuadratic {
            gamma1,
            gamma2,
            gamma3,
        } if (*gamma1, *gamma2, *gamma3) != (bdr.gamma1, bdr.gamma2, bdr.gamma3) => Err(
            IoError::Manifest("per-agent degradation coefficients differ from the scenario's".into()),
        ),
        _ => Ok(obj.kind()),
    }
}

pub fn parse_objective(name: &str, price: &[f64], bdr: &BdrCoefficients) -> Result<ObjectiveSpec, IoError> {
    Ok(match name {
        "linear_price" => ObjectiveSpec::LinearPrice {
            price: price.to_vec(),
        },
        "bdr_quadratic" => ObjectiveSpec::BdrQuadratic {
            gamma1: bdr.gamma1,
            gamma2: bdr.gamma2,
            gamma3: bdr.gamma3,
        },
        "feeder_indicator" => ObjectiveSpec::FeederIndicator,
        "lvm" => ObjectiveSpec::Lvm {
            target: 0.0,
            total_netload: Vec::new(),
        },
        "constant_power" => ObjectiveSpec::ConstantPower,
        other => return Err(IoError::Manifest(format!("unknown objective `{other}`"))),
    })
}

pub fn parse_agent(s: &str) -> Result<AgentRef, IoError> {
    let bad = || IoError::Manifest(format!("invalid agent `{s}`, expected evb:<id>, eva:<id> or dno"));
    if s == "dno" {
        return Ok(AgentRef::Dno);
    }
    let (kind, id) = s.split_once(':').ok_or_else(bad)?;
    let id: u32 = id.parse().map_err(|_| bad())?;
    match kind {
        "evb" => Ok(AgentRef::Evb(id)),
        "eva" => Ok(AgentRef::Eva(id)),
        _ => Err(bad()),
    }
}

pub fn agent_name(agent: AgentRef) -> String {
    match agent {
        AgentRef::Evb(id) => format!("evb:{id}"),
        AgentRef::Eva(id) => format!("eva:{id}"),
        AgentRef::Dno => "dno".into(),
    }
}

impl RhDoc {
    pub fn to_config(&self, scenario: &Scenario) -> Result<RhConfig, IoError> {
        let events = self
            .events
            .iter()
            .map(|e| {
                Ok(PnpEvent {
                    step: e.step,
                    agent: parse_agent(&e.agent)?,
                    objective: parse_objective(&e.objective, &scenario.price, &scenario.bdr)?,
                })
            })
            .collect::<Result<Vec<_>, IoError>>()?;
        Ok(RhConfig {
            total_steps: self.total_steps,
            window: self.window,
            warm_start: self.warm_start,
            events,
        })
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

impl ScenarioFile {
    pub fn new(scenario: Scenario) -> Self {
        ScenarioFile {
            scenario,
            seed: None,
            generation: None,
            rh: None,
        }
    }

    pub fn manifest(&self) -> Result<Manifest, IoError> {
        let sc = &self.scenario;
        let name = |o: &ObjectiveSpec| objective_name(o, &sc.price, &sc.bdr).map(str::to_string);
        Ok(Manifest {
            schema_version: SCHEMA_VERSION,
            grid: GridDoc {
                t0: sc.grid.t0,
                horizon: sc.grid.horizon,
                step_hours: sc.grid.step_hours,
            },
            seed: self.seed,
            generation: self.generation.clone(),
            bdr: BdrDoc {
                gamma1: sc.bdr.gamma1,
                gamma2: sc.bdr.gamma2,
                gamma3: sc.bdr.gamma3,
            },
            dno: AgentObjective {
                objective: name(&sc.dno.objective)?,
                weight: sc.dno.objective_weight,
            },
            evas: sc
                .evas
                .iter()
                .map(|e| {
                    Ok(EvaDoc {
                        id: e.id,
                        objective: AgentObjective {
                            objective: name(&e.objective)?,
                            weight: e.objective_weight,
                        },
                    })
                })
                .collect::<Result<_, IoError>>()?,
            evbs: sc
                .evbs
                .iter()
                .map(|e| {
                    Ok(EvbDoc {
                        id: e.id,
                        eva_id: e.eva_id,
                        battery_capacity: e.battery_capacity,
                        initial_energy: e.initial_energy,
                        arrival_step: e.arrival_step,
                        departure_step: e.departure_step,
                        objective: AgentObjective {
                            objective: name(&e.objective)?,
                            weight: e.objective_weight,
                        },
                    })
                })
                .collect::<Result<_, IoError>>()?,
            rh: self.rh.clone(),
        })
    }

    /// Write the bundle into `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<(), IoError> {
        std::fs::create_dir_all(dir).map_err(|source| IoError::File {
            path: dir.to_path_buf(),
            source,
        })?;
        let manifest = self.manifest()?;
        let sc = &self.scenario;
        let n = sc.grid.horizon;
        let t0 = sc.grid.t0;
        let mut f = create(&dir.join(MANIFEST))?;
        serde_json::to_writer_pretty(&mut f, &manifest)?;
        writeln!(f).map_err(|source| IoError::File {
            path: dir.join(MANIFEST),
            source,
        })?;

        write_csv(
            &dir.join("netload.csv"),
            &["building_id", "step", "kw"],
            sc.evbs
                .iter()
                .flat_map(|e| (0..n).map(move |t| vec![e.id.to_string(), (t0 + t).to_string(), num(e.netload[t])])),
        )?;
        write_csv(
            &dir.join("chargers.csv"),
            &["building_id", "step", "p_min", "p_max"],
            sc.evbs.iter().flat_map(|e| {
                (0..n).map(move |t| {
                    vec![e.id.to_string(), (t0 + t).to_string(), num(e.p_min[t]), num(e.p_max[t])]
                })
            }),
        )?;
        write_csv(
            &dir.join("feeders.csv"),
            &["eva_id", "step", "kw"],
            sc.evas.iter().flat_map(|e| {
                (0..n).map(move |t| vec![e.id.to_string(), (t0 + t).to_string(), num(e.feeder_capacity[t])])
            }),
        )?;
        write_csv(
            &dir.join("dno.csv"),
            &["step", "ev_capacity"],
            (0..n).map(|t| vec![(t0 + t).to_string(), num(sc.dno.ev_capacity[t])]),
        )?;
        write_csv(
            &dir.join("price.csv"),
            &["step", "price"],
            (0..n).map(|t| vec![(t0 + t).to_string(), num(sc.price[t])]),
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, IoError> {
        let manifest: Manifest = serde_json::from_reader(std::io::BufReader::new(open(&dir.join(MANIFEST))?))?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(IoError::Manifest(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                manifest.schema_version
            )));
        }
        let g = manifest.grid;
        let grid = TimeGrid::new(g.t0, g.horizon, g.step_hours)?;
        let bdr = BdrCoefficients {
            gamma1: manifest.bdr.gamma1,
            gamma2: manifest.bdr.gamma2,
            gamma3: manifest.bdr.gamma3,
        };
        let price = super::load_price_csv(&dir.join("price.csv"), &grid)?;
        let netload = super::load_netload_csv(&dir.join("netload.csv"), &grid)?;
        let chargers = load_pairs(&dir.join("chargers.csv"), &["building_id", "step", "p_min", "p_max"], &grid)?;
        let feeders = super::load_keyed_csv(&dir.join("feeders.csv"), &["eva_id", "step", "kw"], &grid)?;
        let dno_path = dir.join("dno.csv");
        let dno_rows = Rows::read(open(&dno_path)?, &dno_path.display().to_string(), &["step", "ev_capacity"])?;
        let mut dno_table = SeriesTable::<1>::new(&dno_rows.file, &grid);
        for (line, rec) in &dno_rows.rows {
            let step = dno_rows.parse(*line, rec, 0, "step")?;
            let v = dno_rows.float(*line, rec, 1, "ev_capacity")?;
            dno_table.insert(*line, 0, step, [v])?;
        }
        let ev_capacity: Vec<f64> = dno_table
            .finish("grid capacity")?
            .remove(&0)
            .ok_or_else(|| IoError::Content {
                file: dno_rows.file.clone(),
                reason: "no rows".into(),
            })?
            .into_iter()
            .map(|[x]| x)
            .collect();

        let dno = DnoSpec {
            ev_capacity,
            objective: parse_objective(&manifest.dno.objective, &price, &bdr)?,
            objective_weight: manifest.dno.weight,
        };
        let evas = manifest
            .evas
            .iter()
            .map(|e| {
                Ok(EvaSpec {
                    id: e.id,
                    feeder_capacity: feeders.get(&e.id).cloned().ok_or_else(|| IoError::Content {
                        file: "feeders.csv".into(),
                        reason: format!("no rows for EVA {}", e.id),
                    })?,
                    objective: parse_objective(&e.objective.objective, &price, &bdr)?,
                    objective_weight: e.objective.weight,
                })
            })
            .collect::<Result<Vec<_>, IoError>>()?;
        let evbs = manifest
            .evbs
            .iter()
            .map(|e| {
                let missing = |file: &str| IoError::Content {
                    file: file.into(),
                    reason: format!("no rows for building {}", e.id),
                };
                let ch = chargers.get(&e.id).ok_or_else(|| missing("chargers.csv"))?;
                Ok(EvbSpec {
                    id: e.id,
                    eva_id: e.eva_id,
                    p_min: ch.iter().map(|v| v[0]).collect(),
                    p_max: ch.iter().map(|v| v[1]).collect(),
                    battery_capacity: e.battery_capacity,
                    initial_energy: e.initial_energy,
                    arrival_step: e.arrival_step,
                    departure_step: e.departure_step,
                    netload: netload.get(&e.id).cloned().ok_or_else(|| missing("netload.csv"))?,
                    objective: parse_objective(&e.objective.objective, &price, &bdr)?,
                    objective_weight: e.objective.weight,
                })
            })
            .collect::<Result<Vec<_>, IoError>>()?;
        let scenario = Scenario::new(grid, dno, evas, evbs, price, bdr)?;
        if let Some(rh) = &manifest.rh {
            rh.to_config(&scenario)?;
        }
        Ok(ScenarioFile {
            scenario,
            seed: manifest.seed,
            generation: manifest.generation,
            rh: manifest.rh,
        })
    }
}

fn load_pairs(path: &Path, header: &[&str], grid: &TimeGrid) -> Result<BTreeMap<u32, Vec<[f64; 2]>>, IoError> {
    let rows = Rows::read(open(path)?, &path.display().to_string(), header)?;
    let mut table = SeriesTable::<2>::new(&rows.file, grid);
    for (line, rec) in &rows.rows {
        let id = rows.parse(*line, rec, 0, header[0])?;
        let step = rows.parse(*line, rec, 1, "step")?;
        let a = rows.float(*line, rec, 2, header[2])?;
        let b = rows.float(*line, rec, 3, header[3])?;
        table.insert(*line, id, step, [a, b])?;
    }
    table.finish(header[0])
}
