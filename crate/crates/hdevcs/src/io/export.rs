//! Result files. Column layouts:
//!
//! ```text
//! trajectories.csv  agent,id,step,kw           EVB, EVA and DNO power
//! aggregate.csv     step,netload,ev_load,total_load
//! eva_load.csv      eva_id,step,ev_load,available_capacity,feeder_capacity
//! residuals.csv     iteration,primal,dual,objective,equilibrium_gap,capacity_excess
//! costs.csv         eva_id,charging_cost,bdr_cost
//! energy.csv        building_id,step,kwh       (receding horizon only)
//! windows.csv       step,iterations,converged,objective   (receding horizon only)
//! metrics.json      mode summary and metric report
//! timing.json       wall-clock time, the only non-deterministic output
//! ```

use std::path::Path;

use hdevcs_core::engine::{ScheduleResult, Shortfall};
use hdevcs_core::metrics::{bdr_cost, charging_cost, MetricReport};
use hdevcs_core::model::Scenario;
use hdevcs_core::rh::RhTrace;
use serde::{Deserialize, Serialize};

use super::{create, IoError};

fn num(v: f64) -> String {
    format!("{v}")
}

pub(crate) fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDoc {
    pub ptp: f64,
    pub pta: f64,
    pub rms: f64,
    pub acc: f64,
    pub bdc: f64,
    pub nap: Option<f64>,
}

impl From<&MetricReport> for MetricsDoc {
    fn from(m: &MetricReport) -> Self {
        MetricsDoc {
            ptp: m.ptp,
            pta: m.pta,
            rms: m.rms,
            acc: m.acc,
            bdc: m.bdc,
            nap: m.nap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortfallDoc {
    pub evb_id: u32,
    pub energy_kwh: f64,
}

/// Summary of one run, written to `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: String,
    pub converged: bool,
    pub iterations: usize,
    pub subproblem_solves: usize,
    pub objective: f64,
    pub capacity_violations: usize,
    pub max_capacity_excess: f64,
    pub shortfalls: Vec<ShortfallDoc>,
    pub metrics: Option<MetricsDoc>,
}

impl RunReport {
    pub fn new(mode: &str, result: &ScheduleResult, metrics: Option<&MetricReport>) -> Self {
        RunReport {
            mode: mode.to_string(),
            converged: result.converged,
            iterations: result.iterations,
            subproblem_solves: result.subproblem_solves,
            objective: result.objective,
            capacity_violations: result.violations.len(),
            max_capacity_excess: result.violations.iter().fold(0.0, |m: f64, v| m.max(v.excess)),
            shortfalls: shortfall_docs(&result.shortfalls),
            metrics: metrics.map(MetricsDoc::from),
        }
    }
}

fn shortfall_docs(s: &[Shortfall]) -> Vec<ShortfallDoc> {
    s.iter()
        .map(|s| ShortfallDoc {
            evb_id: s.evb_id,
            energy_kwh: s.energy_kwh,
        })
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    std::io::Write::write_all(&mut f, b"\n").map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Write the trajectory, load, residual and cost tables of a schedule.
pub fn write_schedule(dir: &Path, scenario: &Scenario, result: &ScheduleResult) -> Result<(), IoError> {
    std::fs::create_dir_all(dir).map_err(|source| IoError::File {
        path: dir.to_path_buf(),
        source,
    })?;
    let n = scenario.grid.horizon;
    let t0 = scenario.grid.t0;

    let mut rows = Vec::new();
    for (evb, p) in scenario.evbs.iter().zip(&result.evb_power) {
        for t in 0..n {
            rows.push(vec!["evb".into(), evb.id.to_string(), (t0 + t).to_string(), num(p[t])]);
        }
    }
    for (eva, p) in scenario.evas.iter().zip(&result.eva_power) {
        for t in 0..n {
            rows.push(vec!["eva".into(), eva.id.to_string(), (t0 + t).to_string(), num(p[t])]);
        }
    }
    for t in 0..n {
        rows.push(vec!["dno".into(), "0".into(), (t0 + t).to_string(), num(result.dno_power[t])]);
    }
    write_rows(&dir.join("trajectories.csv"), &["agent", "id", "step", "kw"], rows)?;

    let netload = scenario.total_netload();
    let ev = result.total_ev_power();
    write_rows(
        &dir.join("aggregate.csv"),
        &["step", "netload", "ev_load", "total_load"],
        (0..n).map(|t| vec![(t0 + t).to_string(), num(netload[t]), num(ev[t]), num(netload[t] + ev[t])]),
    )?;

    let mut rows = Vec::new();
    for (j, eva) in scenario.evas.iter().enumerate() {
        let avail = &scenario.available_capacity(j).series;
        for t in 0..n {
            rows.push(vec![
                eva.id.to_string(),
                (t0 + t).to_string(),
                num(result.eva_aggregate[j][t]),
                num(avail[t]),
                num(eva.feeder_capacity[t]),
            ]);
        }
    }
    write_rows(
        &dir.join("eva_load.csv"),
        &["eva_id", "step", "ev_load", "available_capacity", "feeder_capacity"],
        rows,
    )?;

    write_rows(
        &dir.join("residuals.csv"),
        &["iteration", "primal", "dual", "objective", "equilibrium_gap", "capacity_excess"],
        result.history.iter().map(|r| {
            vec![
                r.iteration.to_string(),
                num(r.primal),
                num(r.dual),
                num(r.objective),
                num(r.equilibrium_gap),
                num(r.capacity_excess),
            ]
        }),
    )?;

    let th = scenario.grid.step_hours;
    write_rows(
        &dir.join("costs.csv"),
        &["eva_id", "charging_cost", "bdr_cost"],
        scenario.evas.iter().enumerate().map(|(j, eva)| {
            let (mut cr, mut bdr) = (0.0, 0.0);
            for &i in scenario.members(j) {
                cr += charging_cost(&result.evb_power[i], &scenario.price, th);
                bdr += bdr_cost(&result.evb_power[i], &scenario.bdr);
            }
            vec![eva.id.to_string(), num(cr), num(bdr)]
        }),
    )?;
    Ok(())
}

/// Write the receding-horizon energy and per-window tables.
pub fn write_rh_trace(dir: &Path, scenario: &Scenario, trace: &RhTrace) -> Result<(), IoError> {
    let t0 = scenario.grid.t0;
    let mut rows = Vec::new();
    for (evb, e) in scenario.evbs.iter().zip(&trace.energy) {
        for (t, v) in e.iter().enumerate() {
            rows.push(vec![evb.id.to_string(), (t0 + t).to_string(), num(*v)]);
        }
    }
    write_rows(&dir.join("energy.csv"), &["building_id", "step", "kwh"], rows)?;
    write_rows(
        &dir.join("windows.csv"),
        &["step", "iterations", "converged", "objective"],
        trace.windows.iter().map(|w| {
            vec![
                (t0 + w.step).to_string(),
                w.iterations.to_string(),
                w.converged.to_string(),
                num(w.objective),
            ]
        }),
    )
}

/// One row of the mode comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub mode: String,
    pub metrics: MetricReport,
    pub iterations: usize,
    pub wall_seconds: f64,
    pub converged: bool,
}

const TABLE1: [&str; 7] = ["mode", "ptp", "pta", "rms", "acc", "bdc", "nap"];
const TABLE3: [&str; 4] = ["mode", "convergence_time_s", "iterations", "converged"];

pub fn write_table1(path: &Path, rows: &[CompareRow]) -> Result<(), IoError> {
    write_rows(
        path,
        &TABLE1,
        rows.iter().map(|r| {
            let m = &r.metrics;
            vec![
                r.mode.clone(),
                num(m.ptp),
                num(m.pta),
                num(m.rms),
                num(m.acc),
                num(m.bdc),
                m.nap.map(num).unwrap_or_default(),
            ]
        }),
    )
}

pub fn write_table3(path: &Path, rows: &[CompareRow]) -> Result<(), IoError> {
    write_rows(
        path,
        &TABLE3,
        rows.iter()
            .map(|r| vec![r.mode.clone(), num(r.wall_seconds), r.iterations.to_string(), r.converged.to_string()]),
    )
}

/// Plain-text table with the best (lowest) value of each metric column
/// marked by `*`.
pub fn render_table(rows: &[CompareRow]) -> String {
    let cols: Vec<Vec<f64>> = (0..6)
        .map(|c| {
            rows.iter()
                .map(|r| {
                    let m = &r.metrics;
                    match c {
                        0 => m.ptp,
                        1 => m.pta.abs(),
                        2 => m.rms,
                        3 => m.acc,
                        4 => m.bdc,
                        _ => m.nap.unwrap_or(f64::INFINITY),
                    }
                })
                .collect()
        })
        .collect();
    let best: Vec<f64> = cols.iter().map(|c| c.iter().copied().fold(f64::INFINITY, f64::min)).collect();
    let mut out = format!(
        "{:<12} {:>12} {:>10} {:>12} {:>12} {:>12} {:>8} {:>10}\n",
        "mode", "PTP(kW)", "PTA", "RMS(kW)", "ACC($)", "BDC($)", "NAP", "iters"
    );
    for (i, r) in rows.iter().enumerate() {
        let m = &r.metrics;
        let cell = |c: usize, v: f64, prec: usize| {
            let mark = if cols[c][i] == best[c] { "*" } else { " " };
            format!("{v:.prec$}{mark}")
        };
        out.push_str(&format!(
            "{:<12} {:>12} {:>10} {:>12} {:>12} {:>12} {:>8} {:>10}\n",
            r.mode,
            cell(0, m.ptp, 1),
            cell(1, m.pta, 3),
            cell(2, m.rms, 2),
            cell(3, m.acc, 2),
            cell(4, m.bdc, 2),
            m.nap.map(|v| cell(5, v, 2)).unwrap_or_default(),
            r.iterations
        ));
    }
    out
}
