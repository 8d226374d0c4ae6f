//! Standalone (no trading) operation of each microgrid, giving the disagreement
//! points of the bargaining game.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{operating_cost, GridPrices, MicrogridParams, Scenario, Schedule, TimeGrid};
use crate::error::{Error, Result};
use crate::model::{local_settings, LocalModel, TradeTerms};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub schedule: Schedule,
    /// Standalone operating cost `C^Non`.
    pub cost: f64,
}

/// Rejects microgrids whose worst-case supply cannot cover the minimum demand of
/// some slot.
pub fn precheck(mg: &MicrogridParams, time: &TimeGrid) -> Result<()> {
    let h = time.slot_hours;
    for t in 0..time.slots {
        let supply = mg.wind_available(t, time) + mg.max_buy_kw * h + mg.storage.max_discharge_kw * h;
        let demand = mg.inelastic_load[t] + mg.users.iter().map(|u| u.min_load[t]).sum::<f64>();
        if supply + 1e-9 * supply.abs().max(1.0) < demand {
            return Err(Error::Infeasible(format!(
                "microgrid `{}` slot {t}: maximum supply {supply} below minimum demand {demand}",
                mg.id
            )));
        }
    }
    Ok(())
}

pub fn solve_benchmark(mg: &MicrogridParams, prices: &GridPrices, time: &TimeGrid, tol: f64) -> Result<BenchmarkResult> {
    precheck(mg, time)?;
    let sol = LocalModel::new(mg, prices, time).solve(TradeTerms::None, &local_settings(tol))?;
    let cost = operating_cost(&sol.schedule, mg, prices)?;
    Ok(BenchmarkResult {
        schedule: sol.schedule,
        cost,
    })
}

/// Benchmarks of every microgrid, solved concurrently.
pub fn solve_all(scenario: &Scenario, tol: f64) -> Result<Vec<BenchmarkResult>> {
    scenario
        .microgrids
        .par_iter()
        .map(|mg| {
            solve_benchmark(mg, &scenario.prices, &scenario.time, tol)
                .map_err(|e| e.context(format!("benchmark of `{}`", mg.id)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::fixtures::microgrid;
    use crate::domain::{validate, StorageParams};

    fn bare(load: f64) -> MicrogridParams {
        MicrogridParams {
            id: "bare".into(),
            wind_capacity_kw: 0.0,
            wind_fraction: vec![0.0],
            max_buy_kw: 100.0,
            max_sell_kw: 100.0,
            inelastic_load: vec![load],
            users: vec![],
            storage: StorageParams {
                capacity_kwh: 0.0,
                dod: 1.0,
                max_charge_kw: 0.0,
                max_discharge_kw: 0.0,
                eff_charge: 1.0,
                eff_discharge: 1.0,
                amortized_cost_per_kwh: 0.0,
                initial_level_kwh: 0.0,
            },
        }
    }

    fn one_slot() -> (GridPrices, TimeGrid) {
        (
            GridPrices {
                buy: vec![0.1],
                sell: vec![0.05],
            },
            TimeGrid::new(1, 1.0).unwrap(),
        )
    }

    #[test]
    fn empty_microgrid_costs_nothing() {
        let (p, tg) = one_slot();
        let r = solve_benchmark(&bare(0.0), &p, &tg, 1e-8).unwrap();
        assert!(r.cost.abs() < 1e-7);
        assert!(r.schedule.grid_buy[0].abs() < 1e-7);
    }

    #[test]
    fn forced_purchase() {
        let (p, tg) = one_slot();
        let r = solve_benchmark(&bare(10.0), &p, &tg, 1e-8).unwrap();
        assert!((r.cost - 1.0).abs() < 1e-7);
        assert!((r.schedule.grid_buy[0] - 10.0).abs() < 1e-7);
    }

    #[test]
    fn precheck_rejects_uncoverable_load() {
        let (p, tg) = one_slot();
        let err = solve_benchmark(&bare(150.0), &p, &tg, 1e-8).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }

    #[test]
    fn fixture_schedule_is_feasible() {
        let tg = TimeGrid::default();
        let mg = microgrid(24);
        let p = GridPrices {
            buy: (0..24).map(|t| 0.12 + 0.01 * t as f64).collect(),
            sell: vec![0.1; 24],
        };
        let r = solve_benchmark(&mg, &p, &tg, 1e-8).unwrap();
        assert!(validate(&r.schedule, &[], &mg, &tg, 1e-6).is_empty());
    }
}
