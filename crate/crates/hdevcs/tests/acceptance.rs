//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! The process exits non-zero on any FAIL only when
//! `HDEVCS_ACCEPTANCE_STRICT=1`; otherwise the report is informational so the
//! regular test run stays green while unmet criteria remain visible.

use std::time::{Duration, Instant};

use hdevcs::generate::{generate_fleet, FleetGenParams, ObjectiveMode};
use hdevcs::parallel::ThreadPoolExecutor;
use hdevcs::runner::apply_weights;
use hdevcs_core::baselines::oracle::centralized_oracle;
use hdevcs_core::baselines::sharing::{hierarchical_sharing_admm, SharingConfig};
use hdevcs_core::baselines::{scc_schedule, ucc_schedule};
use hdevcs_core::engine::{solve, AdmmConfig, EngineState, HdevcsSolver, ResidualNorm, ScheduleResult, Threshold};
use hdevcs_core::exec::Serial;
use hdevcs_core::metrics::evaluate;
use hdevcs_core::model::{AgentRef, ObjectiveSpec, Scenario};
use hdevcs_core::rh::{run_rh, PnpEvent, RhConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn admm(rho: f64, th: Threshold, max_iter: usize) -> AdmmConfig {
    AdmmConfig {
        rho,
        primal_threshold: th,
        dual_threshold: th,
        max_iter,
        residual_norm: ResidualNorm::L2,
    }
}

/// Library defaults for the large presets: ρ = 1, thresholds 1e-3·sqrt(dim).
fn default_admm() -> AdmmConfig {
    admm(1.0, Threshold::Relative(1e-3), 50_000)
}

fn scenario(params: &FleetGenParams) -> Scenario {
    generate_fleet(params).expect("preset generates")
}

/// Largest |Σ members| over every cluster and step, with `p_au = −p_a`.
fn equilibrium_gap(sc: &Scenario, r: &ScheduleResult) -> f64 {
    let n = sc.grid.horizon;
    let mut worst: f64 = 0.0;
    for t in 0..n {
        let mut top = r.dno_power[t];
        for j in 0..sc.evas.len() {
            let ev: f64 = sc.members(j).iter().map(|&i| r.evb_power[i][t]).sum();
            worst = worst.max((ev - r.eva_power[j][t]).abs());
            top += r.eva_power[j][t];
        }
        worst = worst.max(top.abs());
    }
    worst
}

/// Largest excess of EV load over the feeder and grid limits.
fn capacity_excess(sc: &Scenario, evb_power: &[Vec<f64>]) -> f64 {
    let n = sc.grid.horizon;
    let mut worst: f64 = 0.0;
    let mut total = vec![0.0; n];
    for j in 0..sc.evas.len() {
        let avail = &sc.available_capacity(j).series;
        for t in 0..n {
            let ev: f64 = sc.members(j).iter().map(|&i| evb_power[i][t]).sum();
            worst = worst.max(ev - avail[t]);
            total[t] += ev;
        }
    }
    for t in 0..n {
        worst = worst.max(total[t] - sc.dno.ev_capacity[t]);
    }
    worst
}

/// Largest |final energy − C| / C over EVs departing inside the horizon.
fn charge_error(sc: &Scenario, evb_power: &[Vec<f64>]) -> f64 {
    let th = sc.grid.step_hours;
    let mut worst: f64 = 0.0;
    for (evb, p) in sc.evbs.iter().zip(evb_power) {
        if evb.departure_step > sc.grid.horizon {
            continue;
        }
        let e = evb.initial_energy + th * p[..evb.departure_step].iter().sum::<f64>();
        worst = worst.max((e - evb.battery_capacity).abs() / evb.battery_capacity.max(1e-9));
    }
    worst
}

#[derive(Default)]
struct ChargeLog {
    runs: usize,
    worst: f64,
}

impl ChargeLog {
    fn record(&mut self, sc: &Scenario, r: &ScheduleResult) {
        if r.converged {
            self.runs += 1;
            self.worst = self.worst.max(charge_error(sc, &r.evb_power));
        }
    }
}

fn criterion_1(charge: &mut ChargeLog) -> Outcome {
    let start = Instant::now();
    let mut worst_rel: f64 = 0.0;
    let mut worst_gap: f64 = 0.0;
    let mut failures = Vec::new();
    for seed in 0..20 {
        let sc = scenario(&FleetGenParams::fixture(seed).with_objective(ObjectiveMode::Mixed));
        let oracle = match centralized_oracle(&sc, 1e-10) {
            Ok(o) => o,
            Err(e) => {
                failures.push(format!("seed {seed}: oracle {e}"));
                continue;
            }
        };
        let r = solve(&sc, admm(1.0, Threshold::Relative(1e-4), 50_000), Serial).unwrap();
        charge.record(&sc, &r);
        if !r.converged {
            failures.push(format!("seed {seed}: not converged"));
            continue;
        }
        let rel = (r.objective - oracle.objective).abs() / oracle.objective.abs().max(1e-9);
        worst_rel = worst_rel.max(rel);
        worst_gap = worst_gap.max(equilibrium_gap(&sc, &r));
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && worst_rel <= 5e-3 && worst_gap <= 1e-3 && elapsed < Duration::from_secs(60);
    outcome(
        pass,
        format!(
            "20 seeds, worst objective gap {:.2e} (<= 5e-3), worst equilibrium {:.2e} (<= 1e-3), {:.1} s (< 60 s){}",
            worst_rel,
            worst_gap,
            elapsed.as_secs_f64(),
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join(", ")) }
        ),
    )
}

/// Member vectors of every cluster: EVBs then `p_au` for EVA clusters, EVAs
/// then the DNO for the top cluster.
fn cluster_vectors(sc: &Scenario, st: &EngineState) -> Vec<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for j in 0..sc.evas.len() {
        let mut v: Vec<Vec<f64>> = sc.members(j).iter().map(|&i| st.evb_power[i].clone()).collect();
        v.push(st.eva_power[j].iter().map(|x| -x).collect());
        out.push(v);
    }
    let mut top = st.eva_power.clone();
    top.push(st.dno_power.clone());
    out.push(top);
    out
}

/// Runs the engine alongside explicit per-member exchange ADMM bookkeeping
/// (own dual and own z per member). Returns the worst relative dual mismatch
/// and the worst scaled |Σz|.
fn derivation_errors(sc: &Scenario, rho: f64, iters: usize) -> (f64, f64) {
    let mut solver = HdevcsSolver::new(sc, admm(rho, Threshold::Absolute(1e-300), iters), Serial).unwrap();
    let shape = cluster_vectors(sc, solver.state());
    let mut duals: Vec<Vec<Vec<f64>>> = shape.iter().map(|c| c.iter().map(|v| vec![0.0; v.len()]).collect()).collect();
    let mut z = duals.clone();
    let (mut dual_err, mut zsum_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..iters {
        solver.step().unwrap();
        let st = solver.state();
        let members = cluster_vectors(sc, st);
        for (c, vecs) in members.iter().enumerate() {
            let size = vecs.len() as f64;
            for t in 0..sc.grid.horizon {
                let mean = vecs.iter().zip(&duals[c]).map(|(p, l)| p[t] + l[t]).sum::<f64>() / size;
                for m in 0..vecs.len() {
                    z[c][m][t] = vecs[m][t] + duals[c][m][t] - mean;
                    duals[c][m][t] += vecs[m][t] - z[c][m][t];
                    let d = duals[c][m][t];
                    dual_err = dual_err.max((d - st.clusters[c].dual[t]).abs() / (1.0 + d.abs()));
                }
                let zsum: f64 = z[c].iter().map(|v| v[t]).sum();
                let scale: f64 = vecs.iter().map(|p| p[t].abs()).sum::<f64>() + 1.0;
                zsum_err = zsum_err.max(zsum.abs() / scale);
            }
        }
    }
    (dual_err, zsum_err)
}

fn criterion_2() -> Outcome {
    let mut dual_err: f64 = 0.0;
    let mut zsum_err: f64 = 0.0;
    let mut runs = Vec::new();
    for seed in 0..5 {
        runs.push((scenario(&FleetGenParams::fixture(seed).with_objective(ObjectiveMode::Mixed)), 1.0, 200));
    }
    runs.push((scenario(&FleetGenParams::fixture(9)), 0.05, 200));
    runs.push((scenario(&FleetGenParams::system1(0)), 1.0, 40));
    for (sc, rho, iters) in &runs {
        let (d, z) = derivation_errors(sc, *rho, *iters);
        dual_err = dual_err.max(d);
        zsum_err = zsum_err.max(z);
    }
    outcome(
        dual_err <= 1e-12 && zsum_err <= 1e-10,
        format!(
            "{} runs, every iteration: member dual mismatch {:.1e} (<= 1e-12), |Σz| {:.1e} (<= 1e-10)",
            runs.len(),
            dual_err,
            zsum_err
        ),
    )
}

fn criterion_3(charge: &mut ChargeLog) -> Outcome {
    let start = Instant::now();
    let sc = scenario(&FleetGenParams::system1(1));
    let cfg = default_admm();
    let (thp, _) = cfg.thresholds(&sc);
    let r = solve(&sc, cfg, Serial).unwrap();
    charge.record(&sc, &r);
    let excess = capacity_excess(&sc, &r.evb_power);
    let dense = scenario(&FleetGenParams::system1(1).dense_arrival());
    let scc = scc_schedule(&dense);
    let scc_excess = capacity_excess(&dense, &scc.evb_power);
    let elapsed = start.elapsed();
    outcome(
        r.converged && excess <= thp && scc_excess > 0.0 && elapsed < Duration::from_secs(600),
        format!(
            "HDEVCS converged {} in {} iterations, worst excess {:.2e} kW (<= th_p {:.3}); sCC dense-arrival worst excess {:.1} kW over {} feeder-steps; {:.0} s (< 600 s)",
            r.converged,
            r.iterations,
            excess,
            thp,
            scc_excess,
            scc.violations.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_4(charge: &ChargeLog) -> Outcome {
    outcome(
        charge.runs > 0 && charge.worst <= 1e-6,
        format!("{} converged runs, worst |final − C|/C {:.1e} (<= 1e-6)", charge.runs, charge.worst),
    )
}

struct System1Runs {
    /// `(seed, PTP hdevcs, PTP scc, PTP ucc, ACC weight 1, ACC weight 10, BDC)`
    rows: Vec<(u64, f64, f64, f64, f64, f64, f64)>,
}

fn system1_runs(charge: &mut ChargeLog) -> System1Runs {
    let mut rows = Vec::new();
    for seed in 0..5 {
        let sc = scenario(&FleetGenParams::system1(seed));
        let hd = solve(&sc, default_admm(), Serial).unwrap();
        charge.record(&sc, &hd);
        let heavy = apply_weights(&sc, Some(10.0), None).unwrap();
        let hd10 = solve(&heavy, default_admm(), Serial).unwrap();
        charge.record(&heavy, &hd10);
        let m = evaluate(&sc, &hd.evb_power).unwrap();
        let m10 = evaluate(&sc, &hd10.evb_power).unwrap();
        let scc = evaluate(&sc, &scc_schedule(&sc).evb_power).unwrap();
        let ucc = evaluate(&sc, &ucc_schedule(&sc).evb_power).unwrap();
        rows.push((seed, m.ptp, scc.ptp, ucc.ptp, m.acc, m10.acc, m.bdc));
    }
    System1Runs { rows }
}

fn criterion_5(runs: &System1Runs) -> Outcome {
    let mut detail = Vec::new();
    let mut pass = true;
    for &(seed, hd, scc, ucc, acc1, acc10, _) in &runs.rows {
        let ok = hd < scc && scc < ucc && acc10 <= acc1;
        pass &= ok;
        detail.push(format!(
            "seed {seed}: PTP {hd:.1} < {scc:.1} < {ucc:.1}, ACC {acc10:.3} <= {acc1:.3}{}",
            if ok { "" } else { " (violated)" }
        ));
    }
    outcome(pass, detail.join("; "))
}

fn criterion_6(runs: &System1Runs, charge: &mut ChargeLog) -> Outcome {
    let mut detail = Vec::new();
    let mut pass = true;
    for &(seed, .., bdc_cr) in &runs.rows {
        let sc = scenario(&FleetGenParams::system1(seed).with_objective(ObjectiveMode::CrBdr));
        let r = solve(&sc, default_admm(), Serial).unwrap();
        charge.record(&sc, &r);
        let bdc = evaluate(&sc, &r.evb_power).unwrap().bdc;
        let ok = r.converged && bdc <= bdc_cr;
        pass &= ok;
        detail.push(format!("seed {seed}: BDC {bdc:.3} <= {bdc_cr:.3}{}", if ok { "" } else { " (violated)" }));
    }
    outcome(pass, detail.join("; "))
}

fn criterion_7() -> Outcome {
    let sc = scenario(&FleetGenParams::fixture(0));
    let rhos = [0.05, 0.1, 0.5, 1.0];
    let mut iters = Vec::new();
    let mut at50 = Vec::new();
    for &rho in &rhos {
        let r = solve(&sc, admm(rho, Threshold::Relative(1e-3), 100_000), Serial).unwrap();
        iters.push(if r.converged { r.iterations } else { usize::MAX });
        at50.push(r.history.get(49).map_or(0.0, |h| h.primal));
    }
    let fewest = iters[3] < iters[0] && iters[3] < iters[1] && iters[3] < iters[2];
    let largest = at50[0] > at50[1] && at50[0] > at50[2] && at50[0] > at50[3];
    outcome(
        fewest && largest,
        format!(
            "iterations to 1e-3 for ρ = 0.05/0.1/0.5/1: {:?}; primal at iteration 50: [{}]",
            iters,
            at50.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let sc = scenario(&FleetGenParams::system1(0));
    let cfg = default_admm();
    let hd = solve(&sc, cfg, Serial).unwrap();
    let sh = hierarchical_sharing_admm(
        &sc,
        &SharingConfig {
            admm: cfg,
            ..SharingConfig::default()
        },
        Serial,
    )
    .unwrap();
    let elapsed = start.elapsed();
    let s = &sh.schedule;
    let ratio = hd.iterations as f64 / s.iterations.max(1) as f64;
    outcome(
        hd.converged && s.converged && ratio <= 0.7 && elapsed < Duration::from_secs(900),
        format!(
            "HDEVCS {} iterations ({} subproblem solves) vs sharing {} outer iterations ({} inner, {} subproblem solves); ratio {:.2} (<= 0.70); {:.0} s (< 900 s)",
            hd.iterations,
            hd.subproblem_solves,
            s.iterations,
            sh.inner_iterations,
            s.subproblem_solves,
            ratio,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut params = FleetGenParams::fixture(3);
    params.horizon = 16;
    let sc = scenario(&params);
    let th = sc.grid.step_hours;
    let switch = 2;
    let total_steps = 9;
    // An EV plugged before the switch that leaves inside the simulated steps.
    let Some(i) = sc
        .evbs
        .iter()
        .position(|e| e.arrival_step <= switch && e.departure_step > switch + 1 && e.departure_step <= total_steps)
    else {
        return outcome(false, "no EV suits the switch".into());
    };
    let evb = &sc.evbs[i];
    let cfg = RhConfig {
        total_steps,
        window: 8,
        warm_start: true,
        events: vec![PnpEvent {
            step: switch,
            agent: AgentRef::Evb(evb.id),
            objective: ObjectiveSpec::ConstantPower,
        }],
    };
    let trace = match run_rh(&sc, &cfg, admm(1.0, Threshold::Relative(1e-4), 50_000), &Serial) {
        Ok(t) => t,
        Err(e) => return outcome(false, format!("receding horizon failed: {e}")),
    };
    let p = &trace.applied[i];
    let after = &p[switch..evb.departure_step];
    let spread = after.iter().fold(f64::NEG_INFINITY, |m: f64, v| m.max(*v))
        - after.iter().fold(f64::INFINITY, |m: f64, v| m.min(*v));
    let energy = trace.energy[i][evb.departure_step];
    // Independent recomputation from the applied powers.
    let recomputed = evb.initial_energy + th * p[..evb.departure_step].iter().sum::<f64>();
    let err = (energy - evb.battery_capacity).abs().max((recomputed - evb.battery_capacity).abs());
    outcome(
        spread <= 1e-6 && err <= 1e-6,
        format!(
            "EVB {} switched at step {switch}: applied power spread {:.1e} kW (<= 1e-6), departure energy error {:.1e} kWh (<= 1e-6)",
            evb.id, spread, err
        ),
    )
}

fn criterion_10() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let sc = scenario(&FleetGenParams::fixture(seed).with_objective(ObjectiveMode::Mixed));
        let run = |w: usize| {
            let exec = ThreadPoolExecutor::new(w).unwrap();
            solve(&sc, admm(1.0, Threshold::Relative(1e-4), 50_000), &exec).unwrap()
        };
        let base = run(1);
        for w in [4, 8] {
            let other = run(w);
            for (a, b) in base.evb_power.iter().flatten().zip(other.evb_power.iter().flatten()) {
                worst = worst.max((a - b).abs() / a.abs().max(1.0));
            }
            worst = worst.max((base.objective - other.objective).abs() / base.objective.abs().max(1.0));
        }
    }
    outcome(worst <= 1e-9, format!("workers 1/4/8 on 3 fixtures, worst relative difference {worst:.1e} (<= 1e-9)"))
}

/// Peak resident memory of this process in kB, from `/proc/self/status`.
fn peak_rss_kb() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

fn criterion_11() -> Outcome {
    let sc = scenario(&FleetGenParams::system2(0));
    let agents = sc.evbs.len() + sc.evas.len() + 1;
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(4);
    let exec = ThreadPoolExecutor::new(workers).unwrap();
    let cfg = admm(1.0, Threshold::Relative(1e-2), 100_000);
    let mut solver = HdevcsSolver::new(&sc, cfg, &exec).unwrap();
    let t = Instant::now();
    solver.step().unwrap();
    let one = t.elapsed();
    // Unbounded with HDEVCS_ACCEPTANCE_FULL=1; otherwise an unfinished solve fails.
    let budget = if std::env::var("HDEVCS_ACCEPTANCE_FULL").is_ok_and(|v| v == "1") {
        Duration::MAX
    } else {
        Duration::from_secs(600)
    };
    let t = Instant::now();
    while !solver.is_converged() && solver.state().iteration < 100_000 && t.elapsed() < budget {
        solver.step().unwrap();
    }
    let full = t.elapsed() + one;
    let r = solver.into_result();
    let rss = peak_rss_kb();
    let mem_ok = rss.is_some_and(|kb| kb < 4 * 1024 * 1024);
    outcome(
        agents == 9051 && one < Duration::from_secs(10) && r.converged && mem_ok,
        format!(
            "{agents} agents, {workers} worker(s): one iteration {:.3} s (< 10 s); solve to 1e-2 converged {} after {} iterations in {:.0} s (budget {}); peak RSS {} MB (< 4096)",
            one.as_secs_f64(),
            r.converged,
            r.iterations,
            full.as_secs_f64(),
            if budget == Duration::MAX { "none".to_string() } else { format!("{} s", budget.as_secs()) },
            rss.map_or("unknown".into(), |kb| (kb / 1024).to_string())
        ),
    )
}

fn report(n: usize, title: &str, o: &Outcome, failed: &mut usize) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    if !o.pass {
        *failed += 1;
    }
    println!("{tag} {n:>2} {title}: {}", o.detail);
}

fn main() {
    let mut failed = 0;
    let mut charge = ChargeLog::default();
    report(1, "oracle equivalence", &criterion_1(&mut charge), &mut failed);
    report(2, "derivation invariants", &criterion_2(), &mut failed);
    report(3, "constraint satisfaction", &criterion_3(&mut charge), &mut failed);
    let runs = system1_runs(&mut charge);
    let c5 = criterion_5(&runs);
    let c6 = criterion_6(&runs, &mut charge);
    report(4, "full-charge guarantee", &criterion_4(&charge), &mut failed);
    report(5, "metric ordering", &c5, &mut failed);
    report(6, "degradation ordering", &c6, &mut failed);
    report(7, "penalty sweep", &criterion_7(), &mut failed);
    report(8, "comparator iterations", &criterion_8(), &mut failed);
    report(9, "plug-and-play switch", &criterion_9(), &mut failed);
    report(10, "parallel safety", &criterion_10(), &mut failed);
    report(11, "scale smoke test", &criterion_11(), &mut failed);
    println!("{} of 11 criteria passed", 11 - failed);
    let strict = std::env::var("HDEVCS_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
