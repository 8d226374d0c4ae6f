//! Seeded synthetic scenarios.
//!
//! Microgrid `i` takes the capacities of profile `i mod 3`; the first three
//! profiles follow the usual three-microgrid desk study (600/1000/1000 kW of wind,
//! 500/300/300 kW grid links, 100/200/200 kWh of storage). Wind speeds, prices and
//! loads are drawn from smooth daily shapes plus seeded noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{Scenario, StorageParams};
use crate::error::{Error, Result};
use crate::scenario_file::{
    FeedInMode, MicrogridSection, PriceSection, ScenarioFile, StorageSection, TimeSection, UserSection, WindSection,
};
use crate::wind::{power_fraction, WindCurve};

pub const FEED_IN_RATE: f64 = 0.1;
pub const DEFAULT_DOD: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenOptions {
    pub microgrids: usize,
    /// Elastic users per microgrid.
    pub users: usize,
    pub seed: u64,
    pub slots: usize,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self {
            microgrids: 3,
            users: 3,
            seed: 1,
            slots: 24,
        }
    }
}

struct Profile {
    wind_kw: f64,
    grid_kw: f64,
    beta: f64,
    rate_kw: f64,
    storage_kwh: f64,
    mean_speed: f64,
    inelastic: (f64, f64),
}

const PROFILES: [Profile; 3] = [
    Profile {
        wind_kw: 600.0,
        grid_kw: 500.0,
        beta: 1.0,
        rate_kw: 30.0,
        storage_kwh: 100.0,
        mean_speed: 10.0,
        inelastic: (50.0, 100.0),
    },
    Profile {
        wind_kw: 1000.0,
        grid_kw: 300.0,
        beta: 0.5,
        rate_kw: 40.0,
        storage_kwh: 200.0,
        mean_speed: 7.0,
        inelastic: (120.0, 180.0),
    },
    Profile {
        wind_kw: 1000.0,
        grid_kw: 300.0,
        beta: 0.5,
        rate_kw: 50.0,
        storage_kwh: 200.0,
        mean_speed: 6.0,
        inelastic: (150.0, 200.0),
    },
];

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

/// Daily bump in [0, 1] peaking at hour `peak`.
fn daily(t: usize, slots: usize, peak: f64) -> f64 {
    let hour = 24.0 * t as f64 / slots as f64;
    0.5 + 0.5 * (2.0 * PI * (hour - peak) / 24.0).cos()
}

pub fn generate(opts: &GenOptions) -> Result<ScenarioFile> {
    if opts.microgrids == 0 {
        return Err(Error::Validation("need at least one microgrid".into()));
    }
    if opts.slots == 0 {
        return Err(Error::Validation("need at least one slot".into()));
    }
    let t_len = opts.slots;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let buy: Vec<f64> = (0..t_len)
        .map(|t| round4(0.12 + 0.17 * daily(t, t_len, 18.0) + rng.gen_range(0.0..0.03)))
        .collect();
    let curve = WindCurve::default();
    let user_scale = 3.0 / opts.users.max(1) as f64;

    let mut microgrids = Vec::with_capacity(opts.microgrids);
    for i in 0..opts.microgrids {
        let p = &PROFILES[i % PROFILES.len()];
        let phase = rng.gen_range(0.0..24.0);
        let mut noise = 0.0;
        let fractions = (0..t_len)
            .map(|t| {
                noise = 0.7 * noise + rng.gen_range(-1.0..1.0);
                let v = (p.mean_speed + 3.0 * (daily(t, t_len, phase) - 0.5) + noise).max(0.0);
                power_fraction(v, &curve).map(round4)
            })
            .collect::<Result<Vec<_>>>()?;
        let (lo, hi) = p.inelastic;
        let inelastic = (0..t_len)
            .map(|t| {
                let shape = 0.8 * daily(t, t_len, 19.0) + 0.2 * rng.gen::<f64>();
                round4(lo + (hi - lo) * shape)
            })
            .collect();
        let users = (0..opts.users)
            .map(|_| {
                let peak = rng.gen_range(8.0..22.0);
                let preferred: Vec<f64> = (0..t_len)
                    .map(|t| round4(user_scale * (10.0 + 20.0 * daily(t, t_len, peak) * rng.gen_range(0.8..1.0))))
                    .collect();
                UserSection {
                    total_kwh: round4(preferred.iter().sum()),
                    min: preferred.iter().map(|y| 0.5 * y).collect(),
                    max: preferred.iter().map(|y| 1.5 * y).collect(),
                    preferred,
                    beta: p.beta,
                }
            })
            .collect();
        microgrids.push(MicrogridSection {
            id: format!("MG{}", i + 1),
            wind: WindSection {
                capacity_kw: p.wind_kw,
                fractions: Some(fractions),
                speeds_csv: None,
                speeds_column: None,
                curve: None,
            },
            max_buy_kw: p.grid_kw,
            max_sell_kw: p.grid_kw,
            inelastic,
            users,
            storage: StorageSection {
                capacity: p.storage_kwh,
                dod: DEFAULT_DOD,
                max_charge: p.rate_kw,
                max_discharge: p.rate_kw,
                eff_c: 0.95,
                eff_d: 0.95,
                cs: 0.01,
                initial: StorageParams::mid_band(p.storage_kwh, DEFAULT_DOD),
            },
        });
    }
    Ok(ScenarioFile {
        time: TimeSection {
            slots: t_len,
            slot_hours: 1.0,
        },
        prices: PriceSection::Inline { buy, sell: None },
        feed_in_rate: Some(FEED_IN_RATE),
        feed_in_mode: FeedInMode::Absolute,
        microgrids,
    })
}

pub fn generate_scenario(opts: &GenOptions) -> Result<Scenario> {
    generate(opts)?.to_scenario(std::path::Path::new("."))
}

/// Three-microgrid, three-user scenario used throughout tests and benches.
pub fn desk_scenario() -> Scenario {
    generate_scenario(&GenOptions::default()).expect("default generator output is valid")
}
