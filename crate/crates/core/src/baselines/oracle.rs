//! Centralized reference solution of the full scheduling problem over the
//! stacked EVB variables, by a dense primal-dual interior-point method.
//! Meant for small instances only.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::engine::ScheduleResult;
use crate::model::{ObjectiveSpec, Scenario};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("instance too large for the dense oracle ({0} variables)")]
    TooLarge(usize),
    #[error("problem is infeasible or the KKT system is singular")]
    Infeasible,
    #[error("interior-point method did not converge")]
    NotConverged,
}

/// `minimize ½xᵀHx + cᵀx  s.t.  E x = f,  A x <= b`, with constraint rows
/// given sparsely.
#[derive(Debug, Clone)]
pub struct DenseQp {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub equalities: Vec<(Vec<(usize, f64)>, f64)>,
    pub inequalities: Vec<(Vec<(usize, f64)>, f64)>,
}

impl DenseQp {
    pub fn new(n: usize) -> Self {
        DenseQp {
            hessian: DMatrix::zeros(n, n),
            linear: DVector::zeros(n),
            equalities: Vec::new(),
            inequalities: Vec::new(),
        }
    }

    pub fn add_eq(&mut self, row: &[(usize, f64)], rhs: f64) {
        self.equalities.push((row.to_vec(), rhs));
    }

    pub fn add_le(&mut self, row: &[(usize, f64)], rhs: f64) {
        self.inequalities.push((row.to_vec(), rhs));
    }
}

fn densify(rows: &[(Vec<(usize, f64)>, f64)], n: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut m = DMatrix::zeros(rows.len(), n);
    let mut b = DVector::zeros(rows.len());
    for (i, (row, rhs)) in rows.iter().enumerate() {
        for &(k, v) in row {
            m[(i, k)] += v;
        }
        b[i] = *rhs;
    }
    (m, b)
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut a: f64 = 1.0;
    for i in 0..v.len() {
        if dv[i] < 0.0 {
            a = a.min(-v[i] / dv[i]);
        }
    }
    a
}

/// Mehrotra predictor-corrector on the reduced KKT system
/// `[H + Aᵀ(Z/S)A, Eᵀ; E, 0]`.
pub fn solve_dense_qp(qp: &DenseQp, tol: f64) -> Result<DVector<f64>, OracleError> {
    let n = qp.linear.len();
    let (e, eq_rhs) = densify(&qp.equalities, n);
    let (a, ineq_rhs) = densify(&qp.inequalities, n);
    let (e, a) = (&e, &a);
    let me = e.nrows();
    let mi = a.nrows();

    let mut x = DVector::<f64>::zeros(n);
    let mut y = DVector::<f64>::zeros(me);
    let mut s = (&ineq_rhs - a * &x).map(|v| v.max(1.0));
    let mut z = DVector::<f64>::from_element(mi, 1.0);
    let scale = 1.0
        + qp.linear.amax()
        + ineq_rhs.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
        + eq_rhs.iter().fold(0.0, |m: f64, v| m.max(v.abs()));

    let mut stalled_ok = false;
    for _ in 0..200 {
        let r_dual = &qp.hessian * &x + &qp.linear + e.transpose() * &y + a.transpose() * &z;
        let r_eq = e * &x - &eq_rhs;
        let r_in = a * &x + &s - &ineq_rhs;
        let mu = if mi > 0 { s.dot(&z) / mi as f64 } else { 0.0 };
        let worst = r_dual.amax().max(if me > 0 { r_eq.amax() } else { 0.0 }).max(if mi > 0 {
            r_in.amax()
        } else {
            0.0
        });
        log::trace!("ipm: residual {worst:.3e}, mu {mu:.3e}");
        if worst <= tol * scale && mu <= tol * 1e-2 {
            return Ok(x);
        }
        // Near the solution the KKT matrix can lose rank in floating point;
        // a stalled iterate is accepted at the square root of the tolerance.
        stalled_ok = worst <= libm::sqrt(tol) * scale && mu <= tol;

        let d = z.component_div(&s);
        let mut kkt = DMatrix::<f64>::zeros(n + me, n + me);
        let mut weighted = a.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= d[i];
        }
        let top = &qp.hessian + a.transpose() * &weighted;
        kkt.view_mut((0, 0), (n, n)).copy_from(&top);
        kkt.view_mut((n, 0), (me, n)).copy_from(e);
        kkt.view_mut((0, n), (n, me)).copy_from(&e.transpose());
        let lu = kkt.lu();

        let solve = |r_comp: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
            // ds = −r_in − A dx ; dz = S⁻¹(−r_comp − Z ds)
            let tmp = (r_comp - z.component_mul(&r_in)).component_div(&s);
            let rhs_top = -&r_dual + a.transpose() * &tmp;
            let mut rhs = DVector::<f64>::zeros(n + me);
            rhs.rows_mut(0, n).copy_from(&rhs_top);
            rhs.rows_mut(n, me).copy_from(&(-&r_eq));
            let sol = lu.solve(&rhs)?;
            let dx = sol.rows(0, n).into_owned();
            let dy = sol.rows(n, me).into_owned();
            let ds = -&r_in - a * &dx;
            let dz = (-r_comp - z.component_mul(&ds)).component_div(&s);
            Some((dx, dy, ds, dz))
        };

        let comp = s.component_mul(&z);
        let Some((_, _, ds_aff, dz_aff)) = solve(&comp) else {
            return if stalled_ok { Ok(x) } else { Err(OracleError::NotConverged) };
        };
        let alpha_aff = max_step(&s, &ds_aff).min(max_step(&z, &dz_aff));
        let mu_aff = if mi > 0 {
            (&s + alpha_aff * &ds_aff).dot(&(&z + alpha_aff * &dz_aff)) / mi as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 {
            let r = mu_aff / mu;
            r * r * r
        } else {
            0.0
        };
        let r_comp = comp + ds_aff.component_mul(&dz_aff) - DVector::from_element(mi, sigma * mu);
        let Some((dx, dy, ds, dz)) = solve(&r_comp) else {
            return if stalled_ok { Ok(x) } else { Err(OracleError::NotConverged) };
        };
        let alpha = (0.99 * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);
        x += alpha * dx;
        y += alpha * dy;
        s += alpha * ds;
        z += alpha * dz;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(OracleError::Infeasible);
        }
        if stalled_ok && alpha < 1e-6 {
            return Ok(x);
        }
    }
    if stalled_ok {
        Ok(x)
    } else {
        Err(OracleError::NotConverged)
    }
}

/// Largest number of stacked EVB variables the oracle accepts.
pub const MAX_VARIABLES: usize = 5000;

/// Solve the full problem directly. Returns EVB trajectories and the objective
/// under the same accounting as the distributed solvers.
pub fn centralized_oracle(scenario: &Scenario, tol: f64) -> Result<ScheduleResult, OracleError> {
    let n = scenario.grid.horizon;
    let th = scenario.grid.step_hours;

    // One variable per plugged step of each EV.
    let mut var = vec![vec![None; n]; scenario.evbs.len()];
    let mut count = 0;
    for (i, evb) in scenario.evbs.iter().enumerate() {
        for t in evb.arrival_step..evb.departure_step.min(n) {
            var[i][t] = Some(count);
            count += 1;
        }
    }
    if count > MAX_VARIABLES {
        return Err(OracleError::TooLarge(count));
    }
    let mut qp = DenseQp::new(count);
    let at_step = |t: usize, members: &mut dyn Iterator<Item = usize>| -> Vec<usize> {
        members.filter_map(|i| var[i][t]).collect()
    };

    for (i, evb) in scenario.evbs.iter().enumerate() {
        let w = evb.objective_weight;
        let rate = evb.constant_rate(th);
        let mut cum: Vec<(usize, f64)> = Vec::new();
        for t in 0..n {
            let Some(k) = var[i][t] else { continue };
            match &evb.objective {
                ObjectiveSpec::LinearPrice { price } => qp.linear[k] += w * price[t],
                ObjectiveSpec::BdrQuadratic { gamma1, gamma2, .. } => {
                    qp.hessian[(k, k)] += 2.0 * w * gamma1;
                    qp.linear[k] += w * gamma2;
                }
                _ => {}
            }
            if matches!(evb.objective, ObjectiveSpec::ConstantPower) {
                qp.add_eq(&[(k, 1.0)], rate.clamp(evb.p_min[t], evb.p_max[t]));
            } else if evb.p_min[t] == evb.p_max[t] {
                qp.add_eq(&[(k, 1.0)], evb.p_min[t]);
            } else {
                qp.add_le(&[(k, 1.0)], evb.p_max[t]);
                qp.add_le(&[(k, -1.0)], -evb.p_min[t]);
            }
            cum.push((k, 1.0));
            let (elo, ehi) = evb.energy_bounds(t + 1);
            let (lo, hi) = ((elo - evb.initial_energy) / th, (ehi - evb.initial_energy) / th);
            if t + 1 == evb.departure_step {
                if !matches!(evb.objective, ObjectiveSpec::ConstantPower) {
                    qp.add_eq(&cum, hi);
                }
            } else {
                qp.add_le(&cum, hi);
                let neg: Vec<(usize, f64)> = cum.iter().map(|&(k, v)| (k, -v)).collect();
                qp.add_le(&neg, -lo);
            }
        }
    }

    let mut all: Vec<Vec<usize>> = Vec::with_capacity(n);
    for t in 0..n {
        all.push(at_step(t, &mut (0..scenario.evbs.len())));
    }
    for (j, eva) in scenario.evas.iter().enumerate() {
        let cap = &scenario.available_capacity(j).series;
        let w = eva.objective_weight;
        for t in 0..n {
            let ks = at_step(t, &mut scenario.members(j).iter().copied());
            if ks.is_empty() {
                continue;
            }
            let row: Vec<(usize, f64)> = ks.iter().map(|&k| (k, 1.0)).collect();
            qp.add_le(&row, cap[t]);
            match &eva.objective {
                ObjectiveSpec::LinearPrice { price } => {
                    for &k in &ks {
                        qp.linear[k] += w * price[t];
                    }
                }
                ObjectiveSpec::BdrQuadratic { gamma1, gamma2, .. } => {
                    for &k in &ks {
                        qp.linear[k] += w * gamma2;
                        for &l in &ks {
                            qp.hessian[(k, l)] += 2.0 * w * gamma1;
                        }
                    }
                }
                _ => {}
            }
        }
    }
    let w = scenario.dno.objective_weight;
    for t in 0..n {
        let ks = &all[t];
        if ks.is_empty() {
            continue;
        }
        let row: Vec<(usize, f64)> = ks.iter().map(|&k| (k, 1.0)).collect();
        qp.add_le(&row, scenario.dno.ev_capacity[t]);
        match &scenario.dno.objective {
            ObjectiveSpec::Lvm {
                target,
                total_netload,
            } => {
                for &k in ks {
                    qp.linear[k] += 2.0 * w * (total_netload[t] - target);
                    for &l in ks {
                        qp.hessian[(k, l)] += 2.0 * w;
                    }
                }
            }
            ObjectiveSpec::LinearPrice { price } => {
                for &k in ks {
                    qp.linear[k] -= w * price[t];
                }
            }
            _ => {}
        }
    }

    let x = solve_dense_qp(&qp, tol)?;
    let evb_power: Vec<Vec<f64>> = var
        .iter()
        .zip(&scenario.evbs)
        .map(|(row, evb)| {
            (0..n)
                .map(|t| match row[t] {
                    Some(k) => x[k].clamp(evb.p_min[t], evb.p_max[t]),
                    None => 0.0,
                })
                .collect()
        })
        .collect();
    Ok(ScheduleResult::from_evb_power(scenario, evb_power))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_qp_simplex_projection() {
        // project (1, 2, 4) onto {x >= 0, Σx = 3}: (0, 0.5, 2.5), bound multiplier 0.5
        let mut qp = DenseQp::new(3);
        for k in 0..3 {
            qp.hessian[(k, k)] = 1.0;
            qp.linear[k] = -[1.0, 2.0, 4.0][k];
            qp.add_le(&[(k, -1.0)], 0.0);
        }
        qp.add_eq(&[(0, 1.0), (1, 1.0), (2, 1.0)], 3.0);
        let x = solve_dense_qp(&qp, 1e-10).unwrap();
        for (a, b) in x.iter().zip([0.0, 0.5, 2.5]) {
            assert!((a - b).abs() < 1e-7, "{x}");
        }
    }

    #[test]
    fn dense_lp_picks_cheapest_vertex() {
        // min x0 + 2 x1 s.t. x0 + x1 = 1, 0 <= x <= 1
        let mut qp = DenseQp::new(2);
        qp.linear[0] = 1.0;
        qp.linear[1] = 2.0;
        for k in 0..2 {
            qp.add_le(&[(k, 1.0)], 1.0);
            qp.add_le(&[(k, -1.0)], 0.0);
        }
        qp.add_eq(&[(0, 1.0), (1, 1.0)], 1.0);
        let x = solve_dense_qp(&qp, 1e-10).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-7 && x[1].abs() < 1e-7);
    }
}
