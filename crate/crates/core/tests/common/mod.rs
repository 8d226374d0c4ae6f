#![allow(dead_code)]

pub mod oracles;

use microtrade::benchmark::solve_benchmark;
use microtrade::synth::{generate_scenario, GenOptions};
use microtrade::{GridPrices, MicrogridParams, Scenario, Schedule, TimeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn scenario(microgrids: usize, users: usize, seed: u64) -> Scenario {
    generate_scenario(&GenOptions {
        microgrids,
        users,
        seed,
        slots: 24,
    })
    .unwrap()
}

/// Random scenario with 2 to `max_m` microgrids and 1 to 3 users each.
pub fn random_scenario(seed: u64, max_m: usize) -> Scenario {
    let mut r = rng(seed ^ 0x5eed);
    scenario(r.gen_range(2..=max_m), r.gen_range(1..=3), seed)
}

/// Shorter horizon for tests that solve many problems.
pub fn small_scenario(microgrids: usize, seed: u64) -> Scenario {
    generate_scenario(&GenOptions {
        microgrids,
        users: 2,
        seed,
        slots: 6,
    })
    .unwrap()
}

pub fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Feasible schedules of `mg` drawn as random convex combinations of optima under
/// random tariffs; the feasible set does not depend on prices.
pub fn feasible_points(mg: &MicrogridParams, time: &TimeGrid, count: usize, seed: u64) -> Vec<Schedule> {
    let mut r = rng(seed);
    let t = time.slots;
    let vertices: Vec<Schedule> = (0..4)
        .map(|_| {
            let prices = GridPrices {
                buy: (0..t).map(|_| r.gen_range(0.05..0.5)).collect(),
                sell: (0..t).map(|_| r.gen_range(0.0..0.05)).collect(),
            };
            solve_benchmark(mg, &prices, time, 1e-9).unwrap().schedule
        })
        .collect();
    (0..count)
        .map(|_| {
            let w: Vec<f64> = (0..vertices.len()).map(|_| r.gen::<f64>()).collect();
            let total: f64 = w.iter().sum();
            combine(&vertices, &w.iter().map(|v| v / total).collect::<Vec<_>>())
        })
        .collect()
}

pub fn combine(points: &[Schedule], w: &[f64]) -> Schedule {
    let mix = |f: &dyn Fn(&Schedule) -> &Vec<f64>| -> Vec<f64> {
        let n = f(&points[0]).len();
        (0..n).map(|k| points.iter().zip(w).map(|(p, c)| c * f(p)[k]).sum()).collect()
    };
    Schedule {
        wind_use: mix(&|s| &s.wind_use),
        grid_buy: mix(&|s| &s.grid_buy),
        grid_sell: mix(&|s| &s.grid_sell),
        elastic: (0..points[0].elastic.len())
            .map(|u| mix(&|s| &s.elastic[u]))
            .collect(),
        charge: mix(&|s| &s.charge),
        discharge: mix(&|s| &s.discharge),
        storage_level: mix(&|s| &s.storage_level),
    }
}

/// `copies` identical microgrids built from the first microgrid of a
/// generated scenario.
pub fn identical(copies: usize, seed: u64) -> Scenario {
    let mut sc = scenario(1, 2, seed);
    let mg = sc.microgrids[0].clone();
    sc.microgrids = (0..copies)
        .map(|k| MicrogridParams {
            id: format!("twin{k}"),
            ..mg.clone()
        })
        .collect();
    sc
}

/// One microgrid with plenty of wind and light load next to one with no wind
/// and heavy load.
pub fn complementary(seed: u64) -> Scenario {
    let mut sc = scenario(2, 2, seed);
    let t = sc.slots();
    let windy = &mut sc.microgrids[0];
    windy.wind_capacity_kw = 600.0;
    windy.wind_fraction = vec![0.8; t];
    windy.inelastic_load = vec![20.0; t];
    let calm = &mut sc.microgrids[1];
    calm.wind_capacity_kw = 0.0;
    calm.inelastic_load = vec![200.0; t];
    sc
}
