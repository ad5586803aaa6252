//! Proximal updates of the three agent types.
//!
//! Each function returns `argmin_p  w·f(p) + (penalty)·‖p − anchor‖²` over the
//! agent's local feasible set, where the anchor is built by the engine from
//! the previous iterate and the broadcast signals.

use alloc::vec::Vec;

use crate::model::{EvaSpec, EvbSpec, ObjectiveSpec, TimeGrid};
use crate::qp::{solve_trajectory_qp, QpError, TrajectoryQp};

/// Assemble the EVB subproblem `w·F(p) + ρ/2‖p − anchor‖²` subject to the
/// charger box and the battery energy bounds.
pub fn evb_qp(spec: &EvbSpec, grid: &TimeGrid, anchor: &[f64], rho: f64) -> TrajectoryQp {
    let n = grid.horizon;
    let th = grid.step_hours;
    let w = spec.objective_weight;
    let c0 = spec.initial_energy;
    let mut qp = TrajectoryQp {
        quad: Vec::with_capacity(n),
        lin: Vec::with_capacity(n),
        lower: Vec::with_capacity(n),
        upper: Vec::with_capacity(n),
        cum_lower: Vec::with_capacity(n),
        cum_upper: Vec::with_capacity(n),
    };
    let rate = spec.constant_rate(th);
    for t in 0..n {
        let (q, g) = match &spec.objective {
            ObjectiveSpec::LinearPrice { price } => (rho, w * price[t]),
            ObjectiveSpec::BdrQuadratic { gamma1, gamma2, .. } => {
                (rho + 2.0 * w * gamma1, w * gamma2)
            }
            _ => (rho, 0.0),
        };
        qp.quad.push(q);
        qp.lin.push(g - rho * anchor[t]);
        let (lo, hi) = match spec.objective {
            ObjectiveSpec::ConstantPower if spec.is_plugged(t) => {
                let r = rate.clamp(spec.p_min[t], spec.p_max[t]);
                (r, r)
            }
            _ => spec.power_box(t),
        };
        qp.lower.push(lo);
        qp.upper.push(hi);
        let (elo, ehi) = spec.energy_bounds(t + 1);
        qp.cum_lower.push((elo - c0) / th);
        qp.cum_upper.push((ehi - c0) / th);
    }
    qp
}

pub fn prox_evb(
    spec: &EvbSpec,
    grid: &TimeGrid,
    anchor: &[f64],
    rho: f64,
) -> Result<Vec<f64>, QpError> {
    if anchor.len() != grid.horizon {
        return Err(QpError::DimensionMismatch);
    }
    solve_trajectory_qp(&evb_qp(spec, grid, anchor, rho))
}

/// EVA update `argmin w·f(p) + ρ‖p − anchor‖²` subject to `p <= capacity`.
/// The penalty is `ρ` rather than `ρ/2` because the EVA variable sits in two
/// clusters.
pub fn prox_eva(spec: &EvaSpec, capacity: &[f64], anchor: &[f64], rho: f64) -> Vec<f64> {
    let w = spec.objective_weight;
    anchor
        .iter()
        .enumerate()
        .map(|(t, &m)| {
            let p = match &spec.objective {
                ObjectiveSpec::LinearPrice { price } => m - w * price[t] / (2.0 * rho),
                ObjectiveSpec::BdrQuadratic { gamma1, gamma2, .. } => {
                    (2.0 * rho * m - w * gamma2) / (2.0 * rho + 2.0 * w * gamma1)
                }
                _ => m,
            };
            p.min(capacity[t])
        })
        .collect()
}

/// DNO update `argmin w·f(p) + ρ/2‖p − anchor‖²` subject to `p >= −capacity`.
/// For load-variance minimization `f(p) = ‖(D − p) − Ē‖²`.
pub fn prox_dno(
    objective: &ObjectiveSpec,
    weight: f64,
    ev_capacity: &[f64],
    anchor: &[f64],
    rho: f64,
) -> Vec<f64> {
    anchor
        .iter()
        .enumerate()
        .map(|(t, &v)| {
            let p = match objective {
                ObjectiveSpec::Lvm {
                    target,
                    total_netload,
                } => {
                    (2.0 * weight * (total_netload[t] - target) + rho * v) / (2.0 * weight + rho)
                }
                ObjectiveSpec::LinearPrice { price } => v - weight * price[t] / rho,
                _ => v,
            };
            p.max(-ev_capacity[t])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    /// Golden-section search on a convex 1-D function over `[a, b]`.
    fn minimize_1d(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
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

    fn eva(objective: ObjectiveSpec, weight: f64) -> EvaSpec {
        EvaSpec {
            id: 0,
            feeder_capacity: vec![100.0],
            objective,
            objective_weight: weight,
        }
    }

    proptest! {
        #[test]
        fn eva_price_closed_form(m in -20.0f64..20.0, price in 0.0f64..2.0, w in 0.0f64..10.0,
                                 rho in 0.05f64..5.0, cap in -10.0f64..30.0) {
            let spec = eva(ObjectiveSpec::LinearPrice { price: vec![price] }, w);
            let got = prox_eva(&spec, &[cap], &[m], rho)[0];
            let num = minimize_1d(|p| w * price * p + rho * (p - m) * (p - m), -1e3, cap);
            prop_assert!((got - num).abs() < 1e-6);
        }

        #[test]
        fn eva_bdr_closed_form(m in -20.0f64..20.0, g1 in 0.0f64..0.5, g2 in -1.0f64..1.0,
                               w in 0.0f64..10.0, rho in 0.05f64..5.0, cap in -10.0f64..30.0) {
            let spec = eva(ObjectiveSpec::BdrQuadratic { gamma1: g1, gamma2: g2, gamma3: 0.3 }, w);
            let got = prox_eva(&spec, &[cap], &[m], rho)[0];
            let num = minimize_1d(|p| w * (g1 * p * p + g2 * p) + rho * (p - m) * (p - m), -1e3, cap);
            prop_assert!((got - num).abs() < 1e-6);
        }

        #[test]
        fn dno_lvm_closed_form(v in -50.0f64..50.0, d in -20.0f64..80.0, e in 0.0f64..40.0,
                               w in 0.0f64..10.0, rho in 0.05f64..5.0, cap in 0.0f64..60.0) {
            let obj = ObjectiveSpec::Lvm { target: e, total_netload: vec![d] };
            let got = prox_dno(&obj, w, &[cap], &[v], rho)[0];
            let num = minimize_1d(
                |p| w * ((d - p) - e) * ((d - p) - e) + 0.5 * rho * (p - v) * (p - v),
                -cap,
                1e3,
            );
            prop_assert!((got - num).abs() < 1e-6);
        }

        #[test]
        fn evb_price_matches_clipped_shift(v in proptest::collection::vec(-5.0f64..10.0, 4),
                                           price in proptest::collection::vec(0.0f64..1.0, 4),
                                           rho in 0.1f64..3.0) {
            // No binding energy bound: the battery is large and the EV never departs.
            let spec = EvbSpec {
                id: 0,
                eva_id: 0,
                p_min: vec![-2.0; 4],
                p_max: vec![4.0; 4],
                battery_capacity: 1e3,
                initial_energy: 500.0,
                arrival_step: 0,
                departure_step: 10,
                netload: vec![0.0; 4],
                objective: ObjectiveSpec::LinearPrice { price: price.clone() },
                objective_weight: 1.0,
            };
            let grid = TimeGrid::new(0, 4, 0.5).unwrap();
            let p = prox_evb(&spec, &grid, &v, rho).unwrap();
            for t in 0..4 {
                let expect = (v[t] - price[t] / rho).clamp(-2.0, 4.0);
                prop_assert!((p[t] - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn evb_meets_terminal_energy() {
        let grid = TimeGrid::new(0, 8, 0.5).unwrap();
        let spec = EvbSpec {
            id: 0,
            eva_id: 0,
            p_min: vec![0.0; 8],
            p_max: vec![4.0; 8],
            battery_capacity: 20.0,
            initial_energy: 12.0,
            arrival_step: 1,
            departure_step: 7,
            netload: vec![0.0; 8],
            objective: ObjectiveSpec::BdrQuadratic {
                gamma1: 0.01,
                gamma2: 0.0,
                gamma3: 0.0,
            },
            objective_weight: 1.0,
        };
        let p = prox_evb(&spec, &grid, &[0.0; 8], 1.0).unwrap();
        let delivered: f64 = p.iter().sum::<f64>() * 0.5;
        assert!((delivered - 8.0).abs() < 1e-9);
        assert_eq!(p[0], 0.0);
        assert_eq!(p[7], 0.0);
        // zero anchor and symmetric cost: equal split over six steps
        for &x in &p[1..7] {
            assert!((x - 16.0 / 6.0).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_power_ignores_anchor() {
        let grid = TimeGrid::new(0, 6, 1.0).unwrap();
        let spec = EvbSpec {
            id: 0,
            eva_id: 0,
            p_min: vec![0.0; 6],
            p_max: vec![4.0; 6],
            battery_capacity: 9.0,
            initial_energy: 3.0,
            arrival_step: 2,
            departure_step: 5,
            netload: vec![0.0; 6],
            objective: ObjectiveSpec::ConstantPower,
            objective_weight: 1.0,
        };
        let p = prox_evb(&spec, &grid, &[7.0, -3.0, 1.0, 9.0, 0.0, 2.0], 0.5).unwrap();
        assert_eq!(p, vec![0.0, 0.0, 2.0, 2.0, 2.0, 0.0]);
    }
}
