//! Assembly of one microgrid's local quadratic program.
//!
//! The same builder serves the standalone problem (no trades), the penalized
//! trading subproblem solved inside ADMM, and the settlement solve in which the
//! cleared trades are fixed.
//!
//! Variable layout, each block `T` long: wind use, grid buy, grid sell, charge,
//! discharge, storage level, then one block per user and one per counterpart.

use crate::domain::{GridPrices, MicrogridParams, Schedule, TimeGrid};
use crate::error::{Error, Result};
use crate::qp::{solve_qp_with, IpmSettings, QpBuilder, QpProblem, QpSolution, QpStatus};

/// Default absolute KKT tolerance for local solves.
pub const LOCAL_TOL: f64 = 1e-8;

/// How the counterpart trade variables enter the local problem.
#[derive(Debug, Clone, Copy)]
pub enum TradeTerms<'a> {
    /// No trade variables.
    None,
    /// `Σ_{j,t} ρ/2 (target − e)² − λ e`
    Penalized {
        rho: f64,
        target: &'a [Vec<f64>],
        lambda: &'a [Vec<f64>],
    },
    /// Trades pinned to the given values.
    Fixed(&'a [Vec<f64>]),
}

impl TradeTerms<'_> {
    fn counterparts(&self) -> usize {
        match self {
            TradeTerms::None => 0,
            TradeTerms::Penalized { target, .. } => target.len(),
            TradeTerms::Fixed(e) => e.len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LocalModel<'a> {
    pub mg: &'a MicrogridParams,
    pub prices: &'a GridPrices,
    pub time: &'a TimeGrid,
    /// Optional curvature `ε g²` on wind use to pick a unique optimum.
    pub tikhonov: f64,
}

/// Result of one local solve.
#[derive(Debug, Clone)]
pub struct LocalSolution {
    pub schedule: Schedule,
    /// One series per counterpart; empty without trade variables.
    pub trades: Vec<Vec<f64>>,
    pub qp: QpSolution,
}

impl<'a> LocalModel<'a> {
    pub fn new(mg: &'a MicrogridParams, prices: &'a GridPrices, time: &'a TimeGrid) -> Self {
        Self {
            mg,
            prices,
            time,
            tikhonov: 0.0,
        }
    }

    fn slots(&self) -> usize {
        self.time.slots
    }

    fn block(&self, b: usize) -> usize {
        b * self.slots()
    }

    fn user_col(&self, n: usize, t: usize) -> usize {
        self.block(6 + n) + t
    }

    fn trade_col(&self, k: usize, t: usize) -> usize {
        self.block(6 + self.mg.users.len() + k) + t
    }

    pub fn num_vars(&self, counterparts: usize) -> usize {
        self.block(6 + self.mg.users.len() + counterparts)
    }

    pub fn build(&self, terms: TradeTerms<'_>) -> Result<QpProblem> {
        let t_len = self.slots();
        let k_len = terms.counterparts();
        let mg = self.mg;
        let st = &mg.storage;
        let h = self.time.slot_hours;
        if self.prices.buy.len() != t_len || self.prices.sell.len() != t_len {
            return Err(Error::dim("prices", t_len, self.prices.buy.len().min(self.prices.sell.len())));
        }
        let series_ok = |v: &[Vec<f64>]| v.iter().all(|s| s.len() == t_len);
        match terms {
            TradeTerms::Penalized { rho, target, lambda } => {
                if !(rho > 0.0) {
                    return Err(Error::Validation(format!("penalty must be positive, got {rho}")));
                }
                if lambda.len() != k_len || !series_ok(target) || !series_ok(lambda) {
                    return Err(Error::dim("trade terms", k_len * t_len, lambda.len() * t_len));
                }
            }
            TradeTerms::Fixed(e) if !series_ok(e) => return Err(Error::dim("fixed trades", t_len, 0)),
            _ => {}
        }

        let (g, qb, qs, rc, rd, s) = (0, t_len, 2 * t_len, 3 * t_len, 4 * t_len, 5 * t_len);
        let mut b = QpBuilder::new(self.num_vars(k_len));
        for t in 0..t_len {
            b.bounds(g + t, 0.0, mg.wind_available(t, self.time));
            b.bounds(qb + t, 0.0, mg.max_buy_kw * h);
            b.bounds(qs + t, 0.0, mg.max_sell_kw * h);
            b.bounds(rc + t, 0.0, st.max_charge_kw * h);
            b.bounds(rd + t, 0.0, st.max_discharge_kw * h);
            if t + 1 == t_len {
                b.bounds(s + t, st.initial_level_kwh, st.initial_level_kwh);
            } else {
                b.bounds(s + t, st.min_level(), st.capacity_kwh);
            }
            b.add_linear(qb + t, self.prices.buy[t]);
            b.add_linear(qs + t, -self.prices.sell[t]);
            b.add_linear(rc + t, st.amortized_cost_per_kwh);
            b.add_linear(rd + t, st.amortized_cost_per_kwh);
            if self.tikhonov > 0.0 {
                b.add_quad(g + t, g + t, 2.0 * self.tikhonov);
            }
        }
        for (n, u) in mg.users.iter().enumerate() {
            for t in 0..t_len {
                let c = self.user_col(n, t);
                b.bounds(c, u.min_load[t], u.max_load[t]);
                b.add_quad(c, c, 2.0 * u.discomfort_weight);
                b.add_linear(c, -2.0 * u.discomfort_weight * u.preferred[t]);
            }
        }
        match terms {
            TradeTerms::None => {}
            TradeTerms::Penalized { rho, target, lambda } => {
                for k in 0..k_len {
                    for t in 0..t_len {
                        let c = self.trade_col(k, t);
                        b.add_quad(c, c, rho);
                        b.add_linear(c, -rho * target[k][t] - lambda[k][t]);
                    }
                }
            }
            TradeTerms::Fixed(e) => {
                for k in 0..k_len {
                    for t in 0..t_len {
                        b.bounds(self.trade_col(k, t), e[k][t], e[k][t]);
                    }
                }
            }
        }

        let mut row = Vec::new();
        for t in 0..t_len {
            // supply − demand = inelastic load
            row.clear();
            row.extend([(g + t, 1.0), (qb + t, 1.0), (rd + t, 1.0), (qs + t, -1.0), (rc + t, -1.0)]);
            row.extend((0..mg.users.len()).map(|n| (self.user_col(n, t), -1.0)));
            row.extend((0..k_len).map(|k| (self.trade_col(k, t), 1.0)));
            b.eq_row(&row, mg.inelastic_load[t]);

            row.clear();
            row.extend([(s + t, 1.0), (rc + t, -st.eff_charge), (rd + t, 1.0 / st.eff_discharge)]);
            let rhs = if t == 0 {
                st.initial_level_kwh
            } else {
                row.push((s + t - 1, -1.0));
                0.0
            };
            b.eq_row(&row, rhs);

            b.le_row(
                &[(qs + t, 1.0), (g + t, 1.0), (s + t, -1.0)],
                mg.wind_available(t, self.time),
            );
        }
        for (n, u) in mg.users.iter().enumerate() {
            let cols: Vec<_> = (0..t_len).map(|t| (self.user_col(n, t), 1.0)).collect();
            b.eq_row(&cols, u.total_demand_kwh);
        }
        Ok(b.build())
    }

    pub fn schedule(&self, z: &[f64]) -> Schedule {
        let t_len = self.slots();
        let blk = |b: usize| z[self.block(b)..self.block(b + 1)].to_vec();
        Schedule {
            wind_use: blk(0),
            grid_buy: blk(1),
            grid_sell: blk(2),
            elastic: (0..self.mg.users.len())
                .map(|n| z[self.user_col(n, 0)..self.user_col(n, 0) + t_len].to_vec())
                .collect(),
            charge: blk(3),
            discharge: blk(4),
            storage_level: blk(5),
        }
    }

    pub fn trades(&self, z: &[f64], counterparts: usize) -> Vec<Vec<f64>> {
        let t_len = self.slots();
        (0..counterparts)
            .map(|k| z[self.trade_col(k, 0)..self.trade_col(k, 0) + t_len].to_vec())
            .collect()
    }

    /// Assembles and solves the local problem.
    pub fn solve(&self, terms: TradeTerms<'_>, settings: &IpmSettings) -> Result<LocalSolution> {
        let qp = self.build(terms)?;
        let sol = solve_qp_with(&qp, settings)?;
        match sol.status {
            QpStatus::Optimal => {}
            QpStatus::Infeasible => {
                return Err(Error::Infeasible(format!(
                    "local problem of microgrid `{}`: {}",
                    self.mg.id,
                    sol.diagnostic.as_deref().unwrap_or("no feasible point")
                )))
            }
            QpStatus::MaxIters => {
                return Err(Error::Qp(format!(
                    "local problem of microgrid `{}` stopped after {} iterations (KKT residual {:e})",
                    self.mg.id, sol.iterations, sol.kkt_residual
                )))
            }
        }
        let k = terms.counterparts();
        Ok(LocalSolution {
            schedule: self.schedule(&sol.z),
            trades: self.trades(&sol.z, k),
            qp: sol,
        })
    }
}

/// Settings used for local solves at tolerance `tol`.
pub fn local_settings(tol: f64) -> IpmSettings {
    IpmSettings {
        tol,
        ..IpmSettings::default()
    }
}
