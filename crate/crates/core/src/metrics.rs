//! Evaluation metrics for charging schedules.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::model::{BdrCoefficients, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum MetricError {
    #[error("metric of an empty series")]
    Empty,
    #[error("peak-to-average ratio is undefined for a zero netload average")]
    ZeroAverage,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    /// Peak-to-peak of the total load, kW.
    pub ptp: f64,
    /// Peak total load over the netload average.
    pub pta: f64,
    /// RMS deviation of the total load from the netload average, kW.
    pub rms: f64,
    /// Aggregated charging cost, $.
    pub acc: f64,
    /// Aggregated battery degradation cost, $.
    pub bdc: f64,
    /// Normalized accumulated performance, known only relative to other modes.
    pub nap: Option<f64>,
}

impl MetricReport {
    pub const COLUMNS: [&'static str; 5] = ["ptp", "pta", "rms", "acc", "bdc"];

    pub fn values(&self) -> [f64; 5] {
        [self.ptp, self.pta, self.rms, self.acc, self.bdc]
    }
}

pub fn ptp(load: &[f64]) -> Result<f64, MetricError> {
    if load.is_empty() {
        return Err(MetricError::Empty);
    }
    let max = load.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = load.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(max - min)
}

pub fn pta(load: &[f64], netload_avg: f64) -> Result<f64, MetricError> {
    if load.is_empty() {
        return Err(MetricError::Empty);
    }
    if netload_avg == 0.0 {
        return Err(MetricError::ZeroAverage);
    }
    Ok(load.iter().copied().fold(f64::NEG_INFINITY, f64::max) / netload_avg)
}

pub fn rms_deviation(load: &[f64], netload_avg: f64) -> Result<f64, MetricError> {
    if load.is_empty() {
        return Err(MetricError::Empty);
    }
    let sq: f64 = load.iter().map(|e| (netload_avg - e) * (netload_avg - e)).sum();
    Ok(libm::sqrt(sq / load.len() as f64))
}

/// Energy-weighted cost `Σ Π(t)·p(t)·T_h`.
pub fn charging_cost(power: &[f64], price: &[f64], step_hours: f64) -> f64 {
    power.iter().zip(price).map(|(p, c)| p * c * step_hours).sum()
}

/// `Σ γ1·p² + γ2·p + γ3·[p ≠ 0]`.
pub fn bdr_cost(power: &[f64], coeffs: &BdrCoefficients) -> f64 {
    power
        .iter()
        .map(|&p| {
            let idle = if p != 0.0 { coeffs.gamma3 } else { 0.0 };
            coeffs.gamma1 * p * p + coeffs.gamma2 * p + idle
        })
        .sum()
}

/// Total load `Σ (d + p)` over all EVBs.
pub fn total_load(scenario: &Scenario, evb_power: &[Vec<f64>]) -> Vec<f64> {
    let mut load = vec![0.0; scenario.grid.horizon];
    for (evb, p) in scenario.evbs.iter().zip(evb_power) {
        for t in 0..load.len() {
            load[t] += evb.netload[t] + p[t];
        }
    }
    load
}

/// All metrics of a schedule, priced with the scenario's price and
/// degradation coefficients.
pub fn evaluate(scenario: &Scenario, evb_power: &[Vec<f64>]) -> Result<MetricReport, MetricError> {
    let load = total_load(scenario, evb_power);
    let avg = scenario.netload_average();
    let th = scenario.grid.step_hours;
    Ok(MetricReport {
        ptp: ptp(&load)?,
        pta: pta(&load, avg)?,
        rms: rms_deviation(&load, avg)?,
        acc: evb_power
            .iter()
            .map(|p| charging_cost(p, &scenario.price, th))
            .sum(),
        bdc: evb_power.iter().map(|p| bdr_cost(p, &scenario.bdr)).sum(),
        nap: None,
    })
}

/// Normalized accumulated performance: each column divided by its largest
/// magnitude across modes, summed with unit weights. Lower is better.
pub fn nap(reports: &[MetricReport]) -> Vec<f64> {
    let cols = MetricReport::COLUMNS.len();
    let mut max = vec![0.0f64; cols];
    for r in reports {
        for (m, v) in max.iter_mut().zip(r.values()) {
            *m = m.max(v.abs());
        }
    }
    reports
        .iter()
        .map(|r| {
            r.values()
                .iter()
                .zip(&max)
                .map(|(v, m)| if *m > 0.0 { v.abs() / m } else { 1.0 })
                .sum()
        })
        .collect()
}

/// Fill the `nap` field of every report from the whole set.
pub fn fill_nap(reports: &mut [MetricReport]) {
    let values = nap(reports);
    for (r, v) in reports.iter_mut().zip(values) {
        r.nap = Some(v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_values() {
        assert_eq!(ptp(&[2.0, 5.0, 3.0]).unwrap(), 3.0);
        assert_eq!(ptp(&[4.0; 3]).unwrap(), 0.0);
        assert_eq!(pta(&[2.0, 4.0], 2.0).unwrap(), 2.0);
        assert_eq!(pta(&[3.0; 4], 3.0).unwrap(), 1.0);
        assert_eq!(rms_deviation(&[6.0, 4.0], 5.0).unwrap(), 1.0);
        assert_eq!(charging_cost(&[4.0], &[0.25], 0.5), 0.5);
        assert_eq!(charging_cost(&[0.0; 3], &[0.25; 3], 0.5), 0.0);
        let c = BdrCoefficients {
            gamma1: 1.0,
            gamma2: 1.0,
            gamma3: 1.0,
        };
        assert_eq!(bdr_cost(&[0.0; 4], &c), 0.0);
    }

    #[test]
    fn errors() {
        assert_eq!(ptp(&[]), Err(MetricError::Empty));
        assert_eq!(pta(&[1.0], 0.0), Err(MetricError::ZeroAverage));
    }

    #[test]
    fn flat_profile_has_lower_degradation() {
        let c = BdrCoefficients {
            gamma1: 0.0125,
            gamma2: 0.002,
            gamma3: 0.0,
        };
        let flat = bdr_cost(&[2.0; 4], &c);
        let peaky = bdr_cost(&[4.0, 4.0, 0.0, 0.0], &c);
        // 4·(0.05 + 0.004) vs 2·(0.2 + 0.008)
        assert!((flat - 0.216).abs() < 1e-12);
        assert!((peaky - 0.416).abs() < 1e-12);
        assert!(flat < peaky);
    }

    #[test]
    fn nap_cases() {
        let a = MetricReport {
            ptp: 1.0,
            pta: 1.0,
            rms: 1.0,
            acc: 1.0,
            bdc: 1.0,
            nap: None,
        };
        assert_eq!(nap(&[a]), vec![5.0]);
        let b = MetricReport {
            ptp: 2.0,
            pta: 3.0,
            rms: 1.5,
            acc: 2.0,
            bdc: 4.0,
            nap: None,
        };
        let mut both = [a, b];
        fill_nap(&mut both);
        assert_eq!(both[1].nap, Some(5.0));
        assert!(both[0].nap < both[1].nap);
    }

    fn two_pass_rms(load: &[f64], avg: f64) -> f64 {
        let mut acc = 0.0;
        for x in load {
            let d = x - avg;
            acc += d * d;
        }
        (acc / load.len() as f64).sqrt()
    }

    proptest! {
        #[test]
        fn rms_matches_two_pass(load in proptest::collection::vec(-50.0f64..50.0, 1..60), avg in -10.0f64..10.0) {
            let got = rms_deviation(&load, avg).unwrap();
            prop_assert!((got - two_pass_rms(&load, avg)).abs() <= 1e-9 * (1.0 + got));
        }

        #[test]
        fn scale_and_shift(load in proptest::collection::vec(-50.0f64..50.0, 1..60),
                           c in 0.1f64..10.0, shift in -20.0f64..20.0, avg in 0.5f64..10.0) {
            let scaled: Vec<f64> = load.iter().map(|x| c * x).collect();
            let shifted: Vec<f64> = load.iter().map(|x| x + shift).collect();
            let p = ptp(&load).unwrap();
            prop_assert!((ptp(&scaled).unwrap() - c * p).abs() <= 1e-9 * (1.0 + c * p));
            prop_assert!((ptp(&shifted).unwrap() - p).abs() <= 1e-9 * (1.0 + p.abs() + shift.abs()));
            let r = rms_deviation(&load, avg).unwrap();
            prop_assert!((rms_deviation(&scaled, c * avg).unwrap() - c * r).abs() <= 1e-9 * (1.0 + c * r));
            let a = pta(&load, avg).unwrap();
            prop_assert!((pta(&scaled, c * avg).unwrap() - a).abs() <= 1e-9 * (1.0 + a.abs()));
        }

        #[test]
        fn nap_bounds_and_rescaling(vals in proptest::collection::vec(proptest::collection::vec(0.01f64..100.0, 5), 1..6),
                                    factor in 0.1f64..10.0, col in 0usize..5) {
            let reports: Vec<MetricReport> = vals.iter().map(|v| MetricReport {
                ptp: v[0], pta: v[1], rms: v[2], acc: v[3], bdc: v[4], nap: None,
            }).collect();
            let base = nap(&reports);
            for v in &base {
                prop_assert!(*v > 0.0 && *v <= 5.0 + 1e-12);
            }
            let rescaled: Vec<MetricReport> = reports.iter().map(|r| {
                let mut v = r.values();
                v[col] *= factor;
                MetricReport { ptp: v[0], pta: v[1], rms: v[2], acc: v[3], bdc: v[4], nap: None }
            }).collect();
            let after = nap(&rescaled);
            for (x, y) in base.iter().zip(&after) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
