#![allow(dead_code)]

use hdevcs_core::model::{
    BdrCoefficients, DnoSpec, EvaSpec, EvbSpec, ObjectiveSpec, Scenario, TimeGrid,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BDR: BdrCoefficients = BdrCoefficients {
    gamma1: 0.0125,
    gamma2: 0.002,
    gamma3: 0.001,
};

/// Random 2 EVA × 3 EVB × 8 step scenario with mixed price and degradation
/// objectives. Some chargers are V2G-capable.
pub fn small_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 8;
    let th = 1.0;
    let grid = TimeGrid::new(0, n, th).unwrap();
    let price: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.3)).collect();
    let mut evbs = Vec::new();
    for id in 0..6u32 {
        let arrival = rng.random_range(0..3);
        let departure = rng.random_range(5..=n);
        let p_lo = if rng.random_bool(0.3) { -2.0 } else { 0.0 };
        let c0 = rng.random_range(2.0..6.0);
        let reach = 4.0 * (departure - arrival) as f64 * th;
        let cap = c0 + rng.random_range(0.3..0.8) * reach.min(12.0);
        let objective = if rng.random_bool(0.5) {
            ObjectiveSpec::LinearPrice {
                price: price.clone(),
            }
        } else {
            ObjectiveSpec::BdrQuadratic {
                gamma1: BDR.gamma1,
                gamma2: BDR.gamma2,
                gamma3: BDR.gamma3,
            }
        };
        evbs.push(EvbSpec {
            id,
            eva_id: id / 3,
            p_min: vec![p_lo; n],
            p_max: vec![4.0; n],
            battery_capacity: cap,
            initial_energy: c0,
            arrival_step: arrival,
            departure_step: departure,
            netload: (0..n).map(|_| rng.random_range(0.5..2.0)).collect(),
            objective,
            objective_weight: rng.random_range(0.5..2.0),
        });
    }
    let evas = (0..2u32)
        .map(|id| EvaSpec {
            id,
            feeder_capacity: vec![14.0; n],
            objective: match rng.random_range(0..3) {
                0 => ObjectiveSpec::FeederIndicator,
                1 => ObjectiveSpec::LinearPrice {
                    price: price.clone(),
                },
                _ => ObjectiveSpec::BdrQuadratic {
                    gamma1: BDR.gamma1,
                    gamma2: BDR.gamma2,
                    gamma3: BDR.gamma3,
                },
            },
            objective_weight: 1.0,
        })
        .collect();
    let dno = DnoSpec {
        ev_capacity: vec![40.0; n],
        objective: ObjectiveSpec::Lvm {
            target: 0.0,
            total_netload: vec![0.0; n],
        },
        objective_weight: 1.0,
    };
    Scenario::new(grid, dno, evas, evbs, price, BDR).unwrap()
}
