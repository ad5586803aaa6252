//! Reference schedulers used for comparison.

pub mod oracle;
pub mod sharing;

use alloc::vec;
use alloc::vec::Vec;

use crate::engine::{ScheduleResult, Shortfall};
use crate::model::Scenario;

/// Uncoordinated charging: every EV charges at its maximum rate from arrival
/// until its target is reached.
pub fn ucc_schedule(scenario: &Scenario) -> ScheduleResult {
    let n = scenario.grid.horizon;
    let th = scenario.grid.step_hours;
    let mut shortfalls = Vec::new();
    let evb_power = scenario
        .evbs
        .iter()
        .map(|evb| {
            let mut p = vec![0.0; n];
            let mut remaining = evb.energy_demand();
            for t in evb.arrival_step..evb.departure_step.min(n) {
                if remaining <= 0.0 {
                    break;
                }
                p[t] = evb.p_max[t].min(remaining / th).max(0.0);
                remaining -= p[t] * th;
            }
            if evb.departure_step <= n && remaining > 1e-9 {
                shortfalls.push(Shortfall {
                    evb_id: evb.id,
                    energy_kwh: remaining,
                });
            }
            p
        })
        .collect();
    let mut result = ScheduleResult::from_evb_power(scenario, evb_power);
    result.shortfalls = shortfalls;
    result
}

/// Smart constant charging: every EV charges at the constant rate that meets
/// its target exactly over its whole plug-in interval.
pub fn scc_schedule(scenario: &Scenario) -> ScheduleResult {
    let n = scenario.grid.horizon;
    let th = scenario.grid.step_hours;
    let mut shortfalls = Vec::new();
    let evb_power = scenario
        .evbs
        .iter()
        .map(|evb| {
            let rate = evb.constant_rate(th);
            let mut p = vec![0.0; n];
            let mut lost = 0.0;
            for t in evb.arrival_step..evb.departure_step.min(n) {
                p[t] = rate.clamp(evb.p_min[t], evb.p_max[t]);
                lost += (rate - p[t]) * th;
            }
            if lost > 1e-9 {
                log::warn!("EVB {}: constant rate {rate} kW exceeds the charger limit", evb.id);
                shortfalls.push(Shortfall {
                    evb_id: evb.id,
                    energy_kwh: lost,
                });
            }
            p
        })
        .collect();
    let mut result = ScheduleResult::from_evb_power(scenario, evb_power);
    result.shortfalls = shortfalls;
    result
}
