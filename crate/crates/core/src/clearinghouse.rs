//! End-to-end run of the trading and bargaining phases through a message
//! contract between a coordinator and one agent per microgrid.
//!
//! Agents keep their parameters and schedules to themselves. The coordinator
//! only ever sees trade and payment proposals plus, once trading has settled,
//! each trader's cost reduction.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benchmark::{self, BenchmarkResult};
use crate::domain::{operating_cost, MicrogridParams, PaymentMatrix, Scenario, Schedule, TradeMatrix};
use crate::error::{Error, Result};
use crate::model::{local_settings, LocalModel, TradeTerms, LOCAL_TOL};
use crate::payment::{self, AdmmStateP2, P2Coordinator, P2Options, P2Residual, Surplus};
use crate::trading::{self, AdmmStatus, P1Coordinator, P1Options, P1Residual};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Message {
    /// Auxiliary trades, multipliers and penalty for iteration `k`.
    BroadcastEnergy {
        k: usize,
        rho1: f64,
        e_hat: TradeMatrix,
        lambda: TradeMatrix,
    },
    /// Trades proposed by `sender`, one series per counterpart.
    ProposeEnergy { k: usize, sender: usize, trades: Vec<Vec<f64>> },
    /// Final cleared trades; agents settle their schedules against them.
    ClearEnergy { trades: TradeMatrix, traders: Vec<usize> },
    /// Cost reduction of a trader after settlement.
    ReportSurplus { sender: usize, delta: f64 },
    /// Auxiliary payments and multipliers, in units of `scale`, for iteration `k`.
    BroadcastPayment {
        k: usize,
        rho2: f64,
        scale: f64,
        pi_hat: PaymentMatrix,
        gamma: PaymentMatrix,
    },
    /// Normalized payments proposed by `sender`, one per other trader.
    ProposePayment { k: usize, sender: usize, payments: Vec<f64> },
    Terminate { reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Energy,
    Settlement,
    Payment,
}

/// Audit record of one message; carries no payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageSummary {
    pub phase: Phase,
    pub kind: String,
    pub iteration: Option<usize>,
    /// `None` for the coordinator.
    pub sender: Option<usize>,
    pub bytes: usize,
}

const WORD: usize = 8;

fn trade_bytes(e: &TradeMatrix) -> usize {
    let m = e.microgrids();
    m * m.saturating_sub(1) * e.slots() * WORD
}

fn payment_bytes(p: &PaymentMatrix) -> usize {
    let m = p.microgrids();
    m * m.saturating_sub(1) * WORD
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::BroadcastEnergy { .. } => "broadcast_energy",
            Message::ProposeEnergy { .. } => "propose_energy",
            Message::ClearEnergy { .. } => "clear_energy",
            Message::ReportSurplus { .. } => "report_surplus",
            Message::BroadcastPayment { .. } => "broadcast_payment",
            Message::ProposePayment { .. } => "propose_payment",
            Message::Terminate { .. } => "terminate",
        }
    }

    /// Payload size with every number counted as one 8-byte word.
    pub fn byte_estimate(&self) -> usize {
        match self {
            Message::BroadcastEnergy { e_hat, lambda, .. } => 2 * WORD + trade_bytes(e_hat) + trade_bytes(lambda),
            Message::ProposeEnergy { trades, .. } => 2 * WORD + trades.iter().map(|s| s.len() * WORD).sum::<usize>(),
            Message::ClearEnergy { trades, traders } => trade_bytes(trades) + traders.len() * WORD,
            Message::ReportSurplus { .. } => 2 * WORD,
            Message::BroadcastPayment { pi_hat, gamma, .. } => {
                3 * WORD + payment_bytes(pi_hat) + payment_bytes(gamma)
            }
            Message::ProposePayment { payments, .. } => 2 * WORD + payments.len() * WORD,
            Message::Terminate { reason } => reason.len(),
        }
    }

    fn summary(&self, phase: Phase) -> MessageSummary {
        let (iteration, sender) = match self {
            Message::BroadcastEnergy { k, .. } | Message::BroadcastPayment { k, .. } => (Some(*k), None),
            Message::ProposeEnergy { k, sender, .. } | Message::ProposePayment { k, sender, .. } => {
                (Some(*k), Some(*sender))
            }
            Message::ReportSurplus { sender, .. } => (None, Some(*sender)),
            Message::ClearEnergy { .. } | Message::Terminate { .. } => (None, None),
        };
        MessageSummary {
            phase,
            kind: self.kind().to_string(),
            iteration,
            sender,
            bytes: self.byte_estimate(),
        }
    }
}

/// One microgrid's side of the protocol.
#[derive(Debug, Clone)]
pub struct MicrogridAgent {
    pub index: usize,
    params: MicrogridParams,
    scenario: Scenario,
    p1: P1Options,
    benchmark: BenchmarkResult,
    schedule: Schedule,
    cost: f64,
    /// Own position among the traders, once known.
    trader_pos: Option<usize>,
    delta: f64,
}

impl MicrogridAgent {
    /// `scenario` supplies the shared tariff and horizon; only the agent's own
    /// microgrid entry is consulted.
    pub fn new(index: usize, scenario: &Scenario, benchmark: BenchmarkResult, p1: &P1Options) -> Self {
        let shared = Scenario {
            time: scenario.time,
            prices: scenario.prices.clone(),
            microgrids: vec![scenario.microgrids[index].clone()],
        };
        Self {
            index,
            params: scenario.microgrids[index].clone(),
            scenario: shared,
            p1: p1.clone(),
            schedule: benchmark.schedule.clone(),
            cost: benchmark.cost,
            benchmark,
            trader_pos: None,
            delta: 0.0,
        }
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn handle(&mut self, msg: &Message) -> Result<Option<Message>> {
        match msg {
            Message::BroadcastEnergy {
                k,
                rho1,
                e_hat,
                lambda,
            } => {
                let sol = trading::local_step_with(
                    &self.params,
                    &self.scenario,
                    &e_hat.row(self.index),
                    &lambda.row(self.index),
                    *rho1,
                    &self.p1,
                )?;
                self.cost = operating_cost(&sol.schedule, &self.params, &self.scenario.prices)?;
                self.schedule = sol.schedule;
                Ok(Some(Message::ProposeEnergy {
                    k: *k,
                    sender: self.index,
                    trades: sol.trades,
                }))
            }
            Message::ClearEnergy { trades, traders } => {
                self.trader_pos = traders.iter().position(|&t| t == self.index);
                if self.trader_pos.is_none() {
                    self.schedule = self.benchmark.schedule.clone();
                    self.cost = self.benchmark.cost;
                    self.delta = 0.0;
                    return Ok(None);
                }
                let row = trades.row(self.index);
                let mut model = LocalModel::new(&self.params, &self.scenario.prices, &self.scenario.time);
                model.tikhonov = self.p1.tikhonov;
                let sol = model
                    .solve(TradeTerms::Fixed(&row), &local_settings(self.p1.local_tol))
                    .map_err(|e| e.context(format!("settlement of `{}`", self.params.id)))?;
                self.cost = operating_cost(&sol.schedule, &self.params, &self.scenario.prices)?;
                self.schedule = sol.schedule;
                self.delta = self.benchmark.cost - self.cost;
                Ok(Some(Message::ReportSurplus {
                    sender: self.index,
                    delta: self.delta,
                }))
            }
            Message::BroadcastPayment {
                k,
                rho2,
                scale,
                pi_hat,
                gamma,
            } => {
                let Some(pos) = self.trader_pos else {
                    return Ok(None);
                };
                let payments = payment::local_step_p2(
                    self.delta / scale,
                    &AdmmStateP2::row(pi_hat, pos),
                    &AdmmStateP2::row(gamma, pos),
                    *rho2,
                )?;
                Ok(Some(Message::ProposePayment {
                    k: *k,
                    sender: self.index,
                    payments,
                }))
            }
            _ => Ok(None),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub p1: P1Options,
    pub p2: P2Options,
    pub benchmark_tol: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            p1: P1Options::default(),
            p2: P2Options::default(),
            benchmark_tol: LOCAL_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats<R> {
    pub iterations: usize,
    pub status: AdmmStatus,
    pub tolerance: f64,
    pub residuals: Vec<R>,
}

/// One row of the cost and payment table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub id: String,
    pub cost_no_trading: f64,
    pub cost_with_trading: f64,
    pub payment: f64,
    pub cost_plus_payment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub ids: Vec<String>,
    /// Standalone costs `C_i^Non`.
    pub benchmark_costs: Vec<f64>,
    pub schedules: Vec<Schedule>,
    pub trades: TradeMatrix,
    /// Operating costs `C_i^O` with trading.
    pub trading_costs: Vec<f64>,
    pub social_cost: f64,
    pub traders: Vec<usize>,
    /// Cost reduction per microgrid; zero for non-traders.
    pub surplus: Vec<f64>,
    /// Pairwise payments over all microgrids.
    pub payments: PaymentMatrix,
    pub net_payments: Vec<f64>,
    pub final_costs: Vec<f64>,
    pub p1: PhaseStats<P1Residual>,
    pub p2: Option<PhaseStats<P2Residual>>,
    /// Why no payments were bargained, when applicable.
    pub diagnostic: Option<String>,
    pub trace: Vec<MessageSummary>,
    pub wall_clock_s: f64,
}

impl RunReport {
    pub fn table(&self) -> Vec<CostRow> {
        let mut rows: Vec<CostRow> = (0..self.ids.len())
            .map(|i| CostRow {
                id: self.ids[i].clone(),
                cost_no_trading: self.benchmark_costs[i],
                cost_with_trading: self.trading_costs[i],
                payment: self.net_payments[i],
                cost_plus_payment: self.final_costs[i],
            })
            .collect();
        let sum = |f: fn(&CostRow) -> f64, rows: &[CostRow]| rows.iter().map(f).sum::<f64>();
        rows.push(CostRow {
            id: "total".into(),
            cost_no_trading: sum(|r| r.cost_no_trading, &rows),
            cost_with_trading: sum(|r| r.cost_with_trading, &rows),
            payment: sum(|r| r.payment, &rows),
            cost_plus_payment: sum(|r| r.cost_plus_payment, &rows),
        });
        rows
    }

    /// Relative reduction of the system cost.
    pub fn system_saving(&self) -> f64 {
        let before: f64 = self.benchmark_costs.iter().sum();
        (before - self.social_cost) / before.abs().max(1.0)
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            table: Vec<CostRow>,
            #[serde(flatten)]
            report: &'a RunReport,
        }
        serde_json::to_string_pretty(&Doc {
            table: self.table(),
            report: self,
        })
        .expect("reports always serialize")
    }
}

struct Bus {
    trace: Vec<MessageSummary>,
}

impl Bus {
    fn log(&mut self, phase: Phase, msg: &Message) {
        self.trace.push(msg.summary(phase));
    }

    /// Delivers `msg` to every agent concurrently and collects the replies in
    /// agent order.
    fn broadcast(&mut self, phase: Phase, agents: &mut [MicrogridAgent], msg: &Message) -> Result<Vec<Message>> {
        self.log(phase, msg);
        let replies = agents
            .par_iter_mut()
            .map(|a| a.handle(msg))
            .collect::<Result<Vec<_>>>()?;
        let replies: Vec<Message> = replies.into_iter().flatten().collect();
        for r in &replies {
            self.log(phase, r);
        }
        Ok(replies)
    }
}

/// Benchmark, trading, settlement and payment bargaining.
pub fn run_algorithm1(scenario: &Scenario, opts: &RunOptions) -> Result<RunReport> {
    let start = Instant::now();
    scenario.check()?;
    let m = scenario.num_microgrids();
    let t_len = scenario.slots();
    let benchmarks = benchmark::solve_all(scenario, opts.benchmark_tol)?;
    let mut agents: Vec<MicrogridAgent> = benchmarks
        .iter()
        .enumerate()
        .map(|(i, b)| MicrogridAgent::new(i, scenario, b.clone(), &opts.p1))
        .collect();
    let mut bus = Bus { trace: Vec::new() };

    let mut p1 = P1Coordinator::new(m, t_len, &opts.p1)?;
    let p1_status = if m < 2 {
        AdmmStatus::Converged
    } else {
        loop {
            let msg = Message::BroadcastEnergy {
                k: p1.state.k,
                rho1: p1.state.rho1,
                e_hat: p1.state.e_hat.clone(),
                lambda: p1.state.lambda.clone(),
            };
            let replies = bus
                .broadcast(Phase::Energy, &mut agents, &msg)
                .map_err(|e| e.context(format!("trading iteration {}", p1.state.k + 1)))?;
            let rows: Vec<Vec<Vec<f64>>> = replies
                .into_iter()
                .map(|r| match r {
                    Message::ProposeEnergy { trades, .. } => trades,
                    _ => unreachable!("agents answer energy broadcasts with proposals"),
                })
                .collect();
            // Convergence bookkeeping; the coordinator never reads the schedules.
            let objective: f64 = agents.iter().map(|a| a.cost()).sum();
            if let Some(status) = p1.absorb(&rows, objective) {
                break status;
            }
        }
    };

    let traders = trading::select_traders(&p1.state.e_hat, opts.p1.eps_trade);
    let cleared = trading::restrict_trades(&p1.state.e_hat, &traders);
    let reports = bus
        .broadcast(
            Phase::Settlement,
            &mut agents,
            &Message::ClearEnergy {
                trades: cleared.clone(),
                traders: traders.clone(),
            },
        )
        .map_err(|e| e.context("settlement"))?;
    let mut surplus = vec![0.0; m];
    for r in reports {
        if let Message::ReportSurplus { sender, delta } = r {
            surplus[sender] = delta;
        }
    }

    let mut payments = PaymentMatrix::zeros(m);
    let mut p2_stats = None;
    let mut diagnostic = None;
    let trader_surplus: Vec<f64> = traders.iter().map(|&i| surplus[i]).collect();
    let total: f64 = trader_surplus.iter().sum();
    if traders.len() >= 2 && total > 0.0 {
        let sp = Surplus::new(traders.clone(), trader_surplus)?;
        let mut p2 = P2Coordinator::new(&sp, &opts.p2)?;
        let status = loop {
            let msg = Message::BroadcastPayment {
                k: p2.state.k,
                rho2: p2.state.rho2,
                scale: p2.scale,
                pi_hat: p2.state.pi_hat.clone(),
                gamma: p2.state.gamma.clone(),
            };
            let replies = bus
                .broadcast(Phase::Payment, &mut agents, &msg)
                .map_err(|e| e.context(format!("bargaining iteration {}", p2.state.k + 1)))?;
            let rows: Vec<Vec<f64>> = replies
                .into_iter()
                .map(|r| match r {
                    Message::ProposePayment { payments, .. } => payments,
                    _ => unreachable!("agents answer payment broadcasts with proposals"),
                })
                .collect();
            if let Some(status) = p2.absorb(&rows) {
                break status;
            }
        };
        let res = payment::finish_p2(&p2, status);
        for (a, &i) in traders.iter().enumerate() {
            for (b, &j) in traders.iter().enumerate() {
                if a != b {
                    payments.set(i, j, res.payments.get(a, b));
                }
            }
        }
        p2_stats = Some(PhaseStats {
            iterations: res.iterations,
            status,
            tolerance: p2.eps2(),
            residuals: res.state.residual_history,
        });
    } else if !traders.is_empty() {
        diagnostic = Some(format!(
            "total surplus {total:e} of {} traders leaves nothing to bargain over",
            traders.len()
        ));
    }

    let (schedules, trading_costs, trades, surplus) = if diagnostic.is_some() {
        // Without a bargain every microgrid keeps its standalone operation.
        for a in agents.iter_mut() {
            a.handle(&Message::ClearEnergy {
                trades: TradeMatrix::zeros(m, t_len),
                traders: Vec::new(),
            })?;
        }
        (
            benchmarks.iter().map(|b| b.schedule.clone()).collect(),
            benchmarks.iter().map(|b| b.cost).collect(),
            TradeMatrix::zeros(m, t_len),
            vec![0.0; m],
        )
    } else {
        (
            agents.iter().map(|a| a.schedule().clone()).collect::<Vec<_>>(),
            agents.iter().map(|a| a.cost()).collect::<Vec<_>>(),
            cleared,
            surplus,
        )
    };
    let terminate = Message::Terminate {
        reason: diagnostic.clone().unwrap_or_else(|| "completed".into()),
    };
    bus.log(Phase::Payment, &terminate);

    let net_payments: Vec<f64> = payments.net().iter().map(|v| v + 0.0).collect();
    let final_costs: Vec<f64> = trading_costs.iter().zip(&net_payments).map(|(c, p)| c + p).collect();
    Ok(RunReport {
        ids: scenario.microgrids.iter().map(|m| m.id.clone()).collect(),
        benchmark_costs: benchmarks.iter().map(|b| b.cost).collect(),
        social_cost: trading_costs.iter().sum(),
        schedules,
        trades,
        trading_costs,
        traders: if diagnostic.is_some() { Vec::new() } else { traders },
        surplus,
        payments,
        net_payments,
        final_costs,
        p1: PhaseStats {
            iterations: p1.state.k,
            status: p1_status,
            tolerance: p1.eps1(),
            residuals: p1.state.residual_history,
        },
        p2: p2_stats,
        diagnostic,
        trace: bus.trace,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}

/// Audit trail of a completed run.
pub fn message_trace(report: &RunReport) -> &[MessageSummary] {
    &report.trace
}

/// Convenience wrapper returning an error when either phase did not converge.
pub fn run_converged(scenario: &Scenario, opts: &RunOptions) -> Result<RunReport> {
    let r = run_algorithm1(scenario, opts)?;
    if r.p1.status != AdmmStatus::Converged {
        return Err(Error::Qp(format!("trading did not converge in {} iterations", r.p1.iterations)));
    }
    if let Some(p2) = &r.p2 {
        if p2.status != AdmmStatus::Converged {
            return Err(Error::Qp(format!("bargaining did not converge in {} iterations", p2.iterations)));
        }
    }
    Ok(r)
}
