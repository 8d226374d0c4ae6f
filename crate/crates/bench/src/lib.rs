//! Fixtures shared by the criterion benches.

use microtrade::payment::Surplus;
use microtrade::synth::{generate_scenario, GenOptions};
use microtrade::{Scenario, TradeMatrix};

pub fn scenario(microgrids: usize, seed: u64) -> Scenario {
    generate_scenario(&GenOptions {
        microgrids,
        seed,
        ..GenOptions::default()
    })
    .expect("generator output is valid")
}

/// Deterministic, non-antisymmetric trade pattern.
pub fn trade_pattern(microgrids: usize, slots: usize) -> TradeMatrix {
    let mut e = TradeMatrix::zeros(microgrids, slots);
    for i in 0..microgrids {
        for j in 0..microgrids {
            if i == j {
                continue;
            }
            for t in 0..slots {
                let phase = (i * 7 + j * 3 + t) as f64;
                e.set(i, j, t, 20.0 * phase.sin());
            }
        }
    }
    e
}

pub fn surplus(traders: usize) -> Surplus {
    let delta = (0..traders).map(|i| 50.0 + 37.0 * ((i * 5) % 11) as f64).collect();
    Surplus::from_delta(delta).expect("finite surplus")
}
