//! Distributed minimization of the social operating cost.
//!
//! Each microgrid proposes bilateral trades `e_i` by solving its local problem
//! against the broadcast auxiliary trades `ê` and multipliers `λ`; the
//! coordinator then clears `ê` in closed form and takes a dual ascent step.
//! After convergence a settlement pass fixes every microgrid's trades to the
//! cleared values and re-solves its internal schedule, so the returned solution
//! is exactly balanced and exactly antisymmetric.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{operating_cost, MicrogridParams, Scenario, Schedule, TradeMatrix};
use crate::error::{Error, Result};
use crate::model::{local_settings, LocalModel, LocalSolution, TradeTerms, LOCAL_TOL};

/// Penalty update rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoSchedule {
    Fixed,
    /// `ρ(k) = ρ(1) / k`
    OneOverK,
    /// Multiply or divide `ρ` by `tau` whenever the primal and dual residuals
    /// differ by more than a factor `mu`.
    ResidualBalancing { mu: f64, tau: f64 },
}

impl Default for RhoSchedule {
    fn default() -> Self {
        RhoSchedule::ResidualBalancing { mu: 10.0, tau: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P1Options {
    /// Initial penalty.
    pub rho1: f64,
    /// Stopping threshold on both residuals; `None` selects `1e-4·√(M(M−1)T)`.
    pub eps1: Option<f64>,
    pub max_iters: usize,
    pub rho_schedule: RhoSchedule,
    /// KKT tolerance of each local solve.
    pub local_tol: f64,
    /// Trades below this magnitude mark a microgrid as a non-trader.
    pub eps_trade: f64,
    /// Optional `ε g²` regularization of wind use in local problems.
    pub tikhonov: f64,
}

impl Default for P1Options {
    fn default() -> Self {
        Self {
            rho1: 1.0,
            eps1: None,
            max_iters: 5000,
            rho_schedule: RhoSchedule::default(),
            local_tol: LOCAL_TOL,
            eps_trade: 1e-3,
            tikhonov: 0.0,
        }
    }
}

impl P1Options {
    pub fn eps1_for(&self, microgrids: usize, slots: usize) -> f64 {
        self.eps1
            .unwrap_or_else(|| 1e-4 * ((microgrids * microgrids.saturating_sub(1) * slots) as f64).sqrt())
    }

    fn check(&self) -> Result<()> {
        if !(self.rho1 > 0.0) {
            return Err(Error::Validation(format!("rho1 must be positive, got {}", self.rho1)));
        }
        if let Some(e) = self.eps1 {
            if !(e > 0.0) {
                return Err(Error::Validation(format!("eps1 must be positive, got {e}")));
            }
        }
        if let RhoSchedule::ResidualBalancing { mu, tau } = self.rho_schedule {
            if !(mu > 1.0 && tau > 1.0) {
                return Err(Error::Validation("residual balancing needs mu > 1 and tau > 1".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct P1Residual {
    pub iteration: usize,
    /// `Σ_i ‖ê_i − e_i‖₂`
    pub primal_residual: f64,
    /// `ρ Σ_i ‖ê_i(k+1) − ê_i(k)‖₂`
    pub dual_residual: f64,
    /// Social cost of the local schedules at this iterate.
    pub objective: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdmmStatus {
    Converged,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmStateP1 {
    /// Latest local proposals.
    pub e: TradeMatrix,
    pub e_hat: TradeMatrix,
    pub lambda: TradeMatrix,
    pub rho1: f64,
    /// Completed iterations.
    pub k: usize,
    pub residual_history: Vec<P1Residual>,
}

impl AdmmStateP1 {
    pub fn new(microgrids: usize, slots: usize, rho1: f64) -> Self {
        Self {
            e: TradeMatrix::zeros(microgrids, slots),
            e_hat: TradeMatrix::zeros(microgrids, slots),
            lambda: TradeMatrix::zeros(microgrids, slots),
            rho1,
            k: 0,
            residual_history: Vec::new(),
        }
    }
}

fn local_model<'a>(scenario: &'a Scenario, mg: &'a MicrogridParams, tikhonov: f64) -> LocalModel<'a> {
    let mut m = LocalModel::new(mg, &scenario.prices, &scenario.time);
    m.tikhonov = tikhonov;
    m
}

/// Local problem of microgrid `i` given the auxiliary trades and multipliers
/// against its counterparts (rows in increasing counterpart order).
pub fn local_step_with(
    mg: &MicrogridParams,
    scenario: &Scenario,
    target: &[Vec<f64>],
    lambda: &[Vec<f64>],
    rho: f64,
    opts: &P1Options,
) -> Result<LocalSolution> {
    local_model(scenario, mg, opts.tikhonov)
        .solve(
            TradeTerms::Penalized {
                rho,
                target,
                lambda,
            },
            &local_settings(opts.local_tol),
        )
        .map_err(|e| e.context(format!("local trading problem of `{}`", mg.id)))
}

/// Local step of microgrid `i` at the current state.
pub fn local_step_p1(i: usize, scenario: &Scenario, state: &AdmmStateP1, opts: &P1Options) -> Result<LocalSolution> {
    local_step_with(
        &scenario.microgrids[i],
        scenario,
        &state.e_hat.row(i),
        &state.lambda.row(i),
        state.rho1,
        opts,
    )
}

/// Closed-form clearing step; the result is exactly antisymmetric.
pub fn clearing_update_energy(e: &TradeMatrix, lambda: &TradeMatrix, rho1: f64) -> TradeMatrix {
    let (m, t_len) = (e.microgrids(), e.slots());
    let mut out = TradeMatrix::zeros(m, t_len);
    for i in 0..m {
        for j in (i + 1)..m {
            for t in 0..t_len {
                let v = (rho1 * (e.get(i, j, t) - e.get(j, i, t)) - (lambda.get(i, j, t) - lambda.get(j, i, t)))
                    / (2.0 * rho1);
                out.set(i, j, t, v);
                out.set(j, i, t, -v);
            }
        }
    }
    out
}

/// `λ + ρ (ê − e)`
pub fn dual_update_energy(lambda: &TradeMatrix, e_hat: &TradeMatrix, e: &TradeMatrix, rho1: f64) -> TradeMatrix {
    let (m, t_len) = (e.microgrids(), e.slots());
    let mut out = lambda.clone();
    for i in 0..m {
        for j in (0..m).filter(|&j| j != i) {
            for t in 0..t_len {
                out.set(i, j, t, lambda.get(i, j, t) + rho1 * (e_hat.get(i, j, t) - e.get(i, j, t)));
            }
        }
    }
    out
}

/// `Σ_i ‖a_i − b_i‖₂`
fn row_norm_sum(a: &TradeMatrix, b: &TradeMatrix) -> f64 {
    let m = a.microgrids();
    (0..m)
        .map(|i| {
            (0..m)
                .filter(|&j| j != i)
                .flat_map(|j| a.pair(i, j).iter().zip(b.pair(i, j)))
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        })
        .sum()
}

/// Coordinator side of the iteration: owns the state, absorbs proposals and
/// decides when to stop.
#[derive(Debug, Clone)]
pub struct P1Coordinator {
    pub state: AdmmStateP1,
    eps1: f64,
    initial_rho: f64,
    schedule: RhoSchedule,
    max_iters: usize,
}

impl P1Coordinator {
    pub fn new(microgrids: usize, slots: usize, opts: &P1Options) -> Result<Self> {
        opts.check()?;
        Ok(Self {
            state: AdmmStateP1::new(microgrids, slots, opts.rho1),
            eps1: opts.eps1_for(microgrids, slots),
            initial_rho: opts.rho1,
            schedule: opts.rho_schedule,
            max_iters: opts.max_iters,
        })
    }

    pub fn eps1(&self) -> f64 {
        self.eps1
    }

    /// Absorbs the proposals `rows[i][k][t]` of every microgrid and returns the
    /// status once the run should stop.
    pub fn absorb(&mut self, rows: &[Vec<Vec<f64>>], objective: f64) -> Option<AdmmStatus> {
        let st = &mut self.state;
        let m = st.e.microgrids();
        for (i, row) in rows.iter().enumerate() {
            for (series, j) in row.iter().zip((0..m).filter(|&j| j != i)) {
                st.e.pair_mut(i, j).copy_from_slice(series);
            }
        }
        let rho = st.rho1;
        let e_hat = clearing_update_energy(&st.e, &st.lambda, rho);
        st.lambda = dual_update_energy(&st.lambda, &e_hat, &st.e, rho);
        let primal = row_norm_sum(&e_hat, &st.e);
        let dual = rho * row_norm_sum(&e_hat, &st.e_hat);
        st.e_hat = e_hat;
        st.k += 1;
        st.residual_history.push(P1Residual {
            iteration: st.k,
            primal_residual: primal,
            dual_residual: dual,
            objective,
            rho,
        });
        if primal <= self.eps1 && dual <= self.eps1 {
            return Some(AdmmStatus::Converged);
        }
        if st.k >= self.max_iters {
            return Some(AdmmStatus::MaxIters);
        }
        st.rho1 = match self.schedule {
            RhoSchedule::Fixed => rho,
            RhoSchedule::OneOverK => self.initial_rho / (st.k + 1) as f64,
            RhoSchedule::ResidualBalancing { mu, tau } => {
                if primal > mu * dual {
                    rho * tau
                } else if dual > mu * primal {
                    rho / tau
                } else {
                    rho
                }
            }
        };
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P1Result {
    /// Settled schedules, one per microgrid.
    pub schedules: Vec<Schedule>,
    /// Cleared trades after settlement.
    pub trades: TradeMatrix,
    /// Operating cost of each microgrid under the settled schedule.
    pub costs: Vec<f64>,
    /// Social cost `Σ_i C_i^O`.
    pub objective: f64,
    pub iterations: usize,
    pub status: AdmmStatus,
    pub state: AdmmStateP1,
}

/// Microgrids trading more than `eps_trade` with anyone, in increasing order.
pub fn select_traders(trades: &TradeMatrix, eps_trade: f64) -> Vec<usize> {
    (0..trades.microgrids())
        .filter(|&i| trades.max_abs_row(i) > eps_trade)
        .collect()
}

/// Keeps only trades among `traders`.
pub fn restrict_trades(trades: &TradeMatrix, traders: &[usize]) -> TradeMatrix {
    let m = trades.microgrids();
    let mut out = TradeMatrix::zeros(m, trades.slots());
    for &i in traders {
        for &j in traders.iter().filter(|&&j| j != i) {
            out.pair_mut(i, j).copy_from_slice(trades.pair(i, j));
        }
    }
    out
}

/// Re-solves every microgrid's schedule with its trades fixed to `trades`.
pub fn settle(scenario: &Scenario, trades: &TradeMatrix, opts: &P1Options) -> Result<(Vec<Schedule>, Vec<f64>)> {
    let settings = local_settings(opts.local_tol);
    scenario
        .microgrids
        .par_iter()
        .enumerate()
        .map(|(i, mg)| {
            let row = trades.row(i);
            let sol = local_model(scenario, mg, opts.tikhonov)
                .solve(TradeTerms::Fixed(&row), &settings)
                .map_err(|e| e.context(format!("settlement of `{}`", mg.id)))?;
            let cost = operating_cost(&sol.schedule, mg, &scenario.prices)?;
            Ok((sol.schedule, cost))
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().unzip())
}

/// Social cost of a set of local solutions.
pub fn social_cost(scenario: &Scenario, schedules: &[Schedule]) -> Result<f64> {
    scenario
        .microgrids
        .iter()
        .zip(schedules)
        .map(|(mg, s)| operating_cost(s, mg, &scenario.prices))
        .sum()
}

/// Runs the trading iteration to convergence and settles the cleared trades.
pub fn run_p1(scenario: &Scenario, opts: &P1Options) -> Result<P1Result> {
    let m = scenario.num_microgrids();
    let mut coord = P1Coordinator::new(m, scenario.slots(), opts)?;
    let status = if m < 2 {
        AdmmStatus::Converged
    } else {
        loop {
            let st = &coord.state;
            let sols = (0..m)
                .into_par_iter()
                .map(|i| local_step_p1(i, scenario, st, opts))
                .collect::<Result<Vec<_>>>()?;
            let schedules: Vec<Schedule> = sols.iter().map(|s| s.schedule.clone()).collect();
            let objective = social_cost(scenario, &schedules)?;
            let rows: Vec<_> = sols.into_iter().map(|s| s.trades).collect();
            if let Some(status) = coord.absorb(&rows, objective) {
                break status;
            }
        }
    };
    finish_p1(scenario, coord.state, status, opts)
}

/// Settlement shared by [`run_p1`] and the message-driven coordinator.
pub fn finish_p1(scenario: &Scenario, state: AdmmStateP1, status: AdmmStatus, opts: &P1Options) -> Result<P1Result> {
    let traders = select_traders(&state.e_hat, opts.eps_trade);
    let trades = restrict_trades(&state.e_hat, &traders);
    let (schedules, costs) = settle(scenario, &trades, opts)?;
    Ok(P1Result {
        objective: costs.iter().sum(),
        schedules,
        trades,
        costs,
        iterations: state.k,
        status,
        state,
    })
}

/// Writes `iteration,primal_residual,dual_residual,objective` rows.
pub fn write_residual_csv<W: Write>(history: &[P1Residual], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |source| Error::Csv {
        path: "p1 residual log".into(),
        source,
    };
    w.write_record(["iteration", "primal_residual", "dual_residual", "objective"])
        .map_err(err)?;
    for r in history {
        w.serialize((r.iteration, r.primal_residual, r.dual_residual, r.objective))
            .map_err(err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "p1 residual log".into(),
        source,
    })
}
