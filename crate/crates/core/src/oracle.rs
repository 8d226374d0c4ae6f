//! Centralized reference solutions for verifying the distributed results.
//!
//! The stacked problem is assembled here from the scenario alone, with a layout
//! and constraint encoding of its own (slot-major variables, terminal storage
//! level as an equality row, one variable per unordered trading pair), so that a
//! mistake in the local model cannot certify itself.

use serde::{Deserialize, Serialize};

use crate::clearinghouse::RunReport;
use crate::domain::{operating_cost, Scenario, Schedule, TradeMatrix};
use crate::error::{Error, Result};
use crate::payment;
use crate::qp::{solve_qp_with, IpmSettings, QpBuilder, QpStatus};

/// Curvature added to pair trades; removes the circulation null space that
/// leaves trades around a cycle undetermined. Excluded from reported objectives.
pub const TRADE_REGULARIZATION: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralizedSolution {
    pub schedules: Vec<Schedule>,
    pub trades: TradeMatrix,
    pub costs: Vec<f64>,
    /// Social cost `Σ_i C_i^O`.
    pub objective: f64,
    pub kkt_residual: f64,
}

/// Per-microgrid variable offsets in the stacked vector.
struct Layout {
    slots: usize,
    base: Vec<usize>,
    users: Vec<usize>,
    pair_base: usize,
    microgrids: usize,
}

const PER_SLOT: usize = 6;
const G: usize = 0;
const QB: usize = 1;
const QS: usize = 2;
const RC: usize = 3;
const RD: usize = 4;
const S: usize = 5;

impl Layout {
    fn new(sc: &Scenario, with_trades: bool) -> Self {
        let slots = sc.slots();
        let mut base = Vec::new();
        let mut users = Vec::new();
        let mut off = 0;
        for mg in &sc.microgrids {
            base.push(off);
            users.push(mg.users.len());
            off += slots * (PER_SLOT + mg.users.len());
        }
        let m = sc.num_microgrids();
        Self {
            slots,
            base,
            users,
            pair_base: off,
            microgrids: if with_trades { m } else { 0 },
        }
    }

    fn num_vars(&self) -> usize {
        self.pair_base + self.microgrids * self.microgrids.saturating_sub(1) / 2 * self.slots
    }

    fn var(&self, i: usize, t: usize, kind: usize) -> usize {
        self.base[i] + t * (PER_SLOT + self.users[i]) + kind
    }

    fn user(&self, i: usize, t: usize, n: usize) -> usize {
        self.var(i, t, PER_SLOT + n)
    }

    /// Variable holding `e[a][b][t]` for `a < b`.
    fn pair(&self, a: usize, b: usize, t: usize) -> usize {
        debug_assert!(a < b);
        let m = self.microgrids;
        let k = a * m - a * (a + 1) / 2 + (b - a - 1);
        self.pair_base + k * self.slots + t
    }
}

/// Solves the social cost problem over all microgrids at once. With
/// `with_trades == false` the microgrids are decoupled and each block equals its
/// standalone problem.
pub fn centralized(scenario: &Scenario, with_trades: bool, tol: f64) -> Result<CentralizedSolution> {
    let lay = Layout::new(scenario, with_trades);
    let t_len = lay.slots;
    let h = scenario.time.slot_hours;
    let prices = &scenario.prices;
    let mut b = QpBuilder::new(lay.num_vars());

    for (i, mg) in scenario.microgrids.iter().enumerate() {
        let st = &mg.storage;
        for t in 0..t_len {
            let avail = mg.wind_fraction[t] * mg.wind_capacity_kw * h;
            b.bounds(lay.var(i, t, G), 0.0, avail);
            b.bounds(lay.var(i, t, QB), 0.0, mg.max_buy_kw * h);
            b.bounds(lay.var(i, t, QS), 0.0, mg.max_sell_kw * h);
            b.bounds(lay.var(i, t, RC), 0.0, st.max_charge_kw * h);
            b.bounds(lay.var(i, t, RD), 0.0, st.max_discharge_kw * h);
            b.bounds(lay.var(i, t, S), (1.0 - st.dod) * st.capacity_kwh, st.capacity_kwh);
            b.add_linear(lay.var(i, t, QB), prices.buy[t]);
            b.add_linear(lay.var(i, t, QS), -prices.sell[t]);
            b.add_linear(lay.var(i, t, RC), st.amortized_cost_per_kwh);
            b.add_linear(lay.var(i, t, RD), st.amortized_cost_per_kwh);

            // s_t − s_{t−1} = η_c r_c − r_d / η_d
            let mut dynamics = vec![
                (lay.var(i, t, S), 1.0),
                (lay.var(i, t, RC), -st.eff_charge),
                (lay.var(i, t, RD), 1.0 / st.eff_discharge),
            ];
            if t > 0 {
                dynamics.push((lay.var(i, t - 1, S), -1.0));
            }
            b.eq_row(&dynamics, if t == 0 { st.initial_level_kwh } else { 0.0 });

            // g + q_b + r_d + Σ e − q_s − r_c − Σ x = b
            let mut balance = vec![
                (lay.var(i, t, G), 1.0),
                (lay.var(i, t, QB), 1.0),
                (lay.var(i, t, RD), 1.0),
                (lay.var(i, t, QS), -1.0),
                (lay.var(i, t, RC), -1.0),
            ];
            for n in 0..mg.users.len() {
                balance.push((lay.user(i, t, n), -1.0));
            }
            for j in (0..lay.microgrids).filter(|&j| j != i) {
                let (a, bb, sign) = if i < j { (i, j, 1.0) } else { (j, i, -1.0) };
                balance.push((lay.pair(a, bb, t), sign));
            }
            b.eq_row(&balance, mg.inelastic_load[t]);

            b.le_row(
                &[(lay.var(i, t, QS), 1.0), (lay.var(i, t, G), 1.0), (lay.var(i, t, S), -1.0)],
                avail,
            );
        }
        b.eq_row(&[(lay.var(i, t_len - 1, S), 1.0)], st.initial_level_kwh);

        for (n, u) in mg.users.iter().enumerate() {
            let mut total = Vec::with_capacity(t_len);
            for t in 0..t_len {
                let c = lay.user(i, t, n);
                b.bounds(c, u.min_load[t], u.max_load[t]);
                // β (x − y)² = β x² − 2βy x + const
                b.add_quad(c, c, 2.0 * u.discomfort_weight);
                b.add_linear(c, -2.0 * u.discomfort_weight * u.preferred[t]);
                total.push((c, 1.0));
            }
            b.eq_row(&total, u.total_demand_kwh);
        }
    }
    for j in lay.pair_base..lay.num_vars() {
        b.add_quad(j, j, 2.0 * TRADE_REGULARIZATION);
    }

    let qp = b.build();
    let sol = solve_qp_with(
        &qp,
        &IpmSettings {
            tol,
            max_iters: 300,
            ..IpmSettings::default()
        },
    )?;
    if sol.status != QpStatus::Optimal {
        let msg = sol.diagnostic.clone().unwrap_or_default();
        return Err(match sol.status {
            QpStatus::Infeasible => Error::Infeasible(format!("centralized problem: {msg}")),
            _ => Error::Qp(format!("centralized problem: {msg}")),
        });
    }

    let z = &sol.z;
    let m = scenario.num_microgrids();
    let mut schedules = Vec::with_capacity(m);
    let mut costs = Vec::with_capacity(m);
    for (i, mg) in scenario.microgrids.iter().enumerate() {
        let pick = |kind: usize| (0..t_len).map(|t| z[lay.var(i, t, kind)]).collect::<Vec<_>>();
        let s = Schedule {
            wind_use: pick(G),
            grid_buy: pick(QB),
            grid_sell: pick(QS),
            elastic: (0..mg.users.len())
                .map(|n| (0..t_len).map(|t| z[lay.user(i, t, n)]).collect())
                .collect(),
            charge: pick(RC),
            discharge: pick(RD),
            storage_level: pick(S),
        };
        costs.push(operating_cost(&s, mg, prices)?);
        schedules.push(s);
    }
    let mut trades = TradeMatrix::zeros(m, t_len);
    for a in 0..lay.microgrids {
        for bb in (a + 1)..lay.microgrids {
            for t in 0..t_len {
                let v = z[lay.pair(a, bb, t)];
                trades.set(a, bb, t, v);
                trades.set(bb, a, t, -v);
            }
        }
    }
    Ok(CentralizedSolution {
        objective: costs.iter().sum(),
        schedules,
        trades,
        costs,
        kkt_residual: sol.kkt_residual,
    })
}

/// Social optimum with trading.
pub fn centralized_p1(scenario: &Scenario, tol: f64) -> Result<CentralizedSolution> {
    centralized(scenario, true, tol)
}

/// Outcome of checking a distributed run against the centralized optimum and
/// the analytic payment split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub pass: bool,
    pub distributed_objective: f64,
    pub central_objective: f64,
    /// `|distributed − central| / max(1, |central|)`
    pub objective_gap: f64,
    /// Largest deviation of a trader's net payment from the analytic split.
    pub payment_error: f64,
    pub zero_sum_residual: f64,
    /// Largest `cost + payment − C^Non` over all microgrids.
    pub rationality_excess: f64,
    pub failures: Vec<String>,
}

/// Absolute slack allowed on the payment sum and on individual rationality.
pub const CERTIFY_ABS_TOL: f64 = 1e-6;

pub fn certify(report: &RunReport, central: &CentralizedSolution, tol_rel: f64) -> Certificate {
    let mut failures = Vec::new();
    let objective_gap = (report.social_cost - central.objective).abs() / central.objective.abs().max(1.0);
    if !(objective_gap <= tol_rel) {
        failures.push(format!(
            "social cost {} differs from the centralized optimum {} by {objective_gap:e} (relative)",
            report.social_cost, central.objective
        ));
    }

    let zero_sum_residual = report.net_payments.iter().sum::<f64>().abs();
    if !(zero_sum_residual <= CERTIFY_ABS_TOL) {
        failures.push(format!("net payments sum to {zero_sum_residual:e}"));
    }

    let delta: Vec<f64> = report.traders.iter().map(|&i| report.surplus[i]).collect();
    let expected = if delta.len() >= 2 && delta.iter().sum::<f64>() > 0.0 {
        payment::nbs_payment_oracle(&delta)
    } else {
        vec![0.0; delta.len()]
    };
    let scale = delta.iter().map(|d| d.abs()).fold(1.0, f64::max);
    let mut payment_error: f64 = 0.0;
    for (i, net) in report.net_payments.iter().enumerate() {
        let want = report.traders.iter().position(|&t| t == i).map_or(0.0, |p| expected[p]);
        payment_error = payment_error.max((net - want).abs());
    }
    if !(payment_error <= tol_rel * scale) {
        failures.push(format!("net payments deviate from the equal-surplus split by {payment_error:e}"));
    }

    let rationality_excess = report
        .final_costs
        .iter()
        .zip(&report.benchmark_costs)
        .map(|(f, b)| f - b)
        .fold(f64::NEG_INFINITY, f64::max);
    if rationality_excess > CERTIFY_ABS_TOL {
        failures.push(format!("a microgrid ends {rationality_excess:e} above its standalone cost"));
    }

    Certificate {
        pass: failures.is_empty(),
        distributed_objective: report.social_cost,
        central_objective: central.objective,
        objective_gap,
        payment_error,
        zero_sum_residual,
        rationality_excess,
        failures,
    }
}
