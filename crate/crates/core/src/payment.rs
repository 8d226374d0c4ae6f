//! Distributed Nash bargaining over the trading surplus.
//!
//! Each trading microgrid proposes bilateral payments by maximizing the log of
//! its final benefit against the broadcast auxiliary payments `π̂` and
//! multipliers `γ`; the coordinator clears `π̂` in closed form and updates `γ`.
//!
//! The iteration runs on surpluses divided by their mean `σ = Σδ / |M'|`, so
//! the penalty is meaningful regardless of the currency scale. In currency units
//! this is the same iteration with penalty `ρ₂ / σ²`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::domain::PaymentMatrix;
use crate::error::{Error, Result};
pub use crate::trading::AdmmStatus;

/// Cost reductions `δ_i = C_i^Non − C_i^O` of the trading microgrids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surplus {
    /// Scenario index of each trader, in increasing order.
    pub traders: Vec<usize>,
    pub delta: Vec<f64>,
}

impl Surplus {
    pub fn new(traders: Vec<usize>, delta: Vec<f64>) -> Result<Self> {
        if traders.len() != delta.len() {
            return Err(Error::dim("surplus", traders.len(), delta.len()));
        }
        if let Some(d) = delta.iter().find(|d| !d.is_finite()) {
            return Err(Error::Validation(format!("surplus {d} is not finite")));
        }
        Ok(Self { traders, delta })
    }

    /// Surplus of anonymous traders `0..n`.
    pub fn from_delta(delta: Vec<f64>) -> Result<Self> {
        Self::new((0..delta.len()).collect(), delta)
    }

    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.delta.iter().sum()
    }
}

/// Net payments of the Nash bargaining solution: every trader ends with the
/// same benefit `Σδ / |M'|`.
pub fn nbs_payment_oracle(delta: &[f64]) -> Vec<f64> {
    if delta.is_empty() {
        return Vec::new();
    }
    let share = delta.iter().sum::<f64>() / delta.len() as f64;
    delta.iter().map(|d| d - share).collect()
}

/// `Σ_i ln(δ_i − net_i)`, or `-∞` when some benefit is not positive.
pub fn nash_objective(delta: &[f64], net: &[f64]) -> f64 {
    delta
        .iter()
        .zip(net)
        .map(|(d, c)| if d - c > 0.0 { (d - c).ln() } else { f64::NEG_INFINITY })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P2Options {
    /// Penalty on normalized payments.
    pub rho2: f64,
    /// Stopping threshold in currency units; `None` selects `1e-6·|M'|`.
    pub eps2: Option<f64>,
    pub max_iters: usize,
}

impl Default for P2Options {
    fn default() -> Self {
        Self {
            rho2: 1.0,
            eps2: None,
            max_iters: 2000,
        }
    }
}

impl P2Options {
    pub fn eps2_for(&self, traders: usize) -> f64 {
        self.eps2.unwrap_or(1e-6 * traders as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct P2Residual {
    pub iteration: usize,
    /// `Σ_i ‖π̂_i − π_i‖₂` in currency units.
    pub residual: f64,
    /// `Σ_i ‖π̂_i(k+1) − π̂_i(k)‖₂` in currency units.
    pub dual_residual: f64,
    pub nash_objective: f64,
}

/// Iteration state in normalized units, indexed by position in `M'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmStateP2 {
    pub pi: PaymentMatrix,
    pub pi_hat: PaymentMatrix,
    pub gamma: PaymentMatrix,
    pub rho2: f64,
    pub k: usize,
    pub residual_history: Vec<P2Residual>,
}

impl AdmmStateP2 {
    pub fn new(traders: usize, rho2: f64) -> Self {
        Self {
            pi: PaymentMatrix::zeros(traders),
            pi_hat: PaymentMatrix::zeros(traders),
            gamma: PaymentMatrix::zeros(traders),
            rho2,
            k: 0,
            residual_history: Vec::new(),
        }
    }

    /// Row `i` of a matrix against every counterpart, in increasing order.
    pub fn row(m: &PaymentMatrix, i: usize) -> Vec<f64> {
        (0..m.microgrids()).filter(|&j| j != i).map(|j| m.get(i, j)).collect()
    }
}

/// Closed-form minimizer of
/// `−ln(δ − Σ_j π_j) + Σ_j (ρ/2 (π̂_j − π_j)² − γ_j π_j)`.
pub fn local_step_p2(delta_i: f64, pi_hat: &[f64], gamma: &[f64], rho2: f64) -> Result<Vec<f64>> {
    let m = pi_hat.len();
    if m == 0 {
        return Err(Error::NoBargain("a single trader has nobody to bargain with".into()));
    }
    if gamma.len() != m {
        return Err(Error::dim("gamma", m, gamma.len()));
    }
    if !(rho2 > 0.0) {
        return Err(Error::Validation(format!("rho2 must be positive, got {rho2}")));
    }
    let a = delta_i - pi_hat.iter().sum::<f64>() - gamma.iter().sum::<f64>() / rho2;
    let c = m as f64 / rho2;
    let root = (a * a + 4.0 * c).sqrt();
    // Positive root of c μ² + a μ − 1 = 0 without cancellation.
    let mu = if a >= 0.0 { 2.0 / (a + root) } else { (root - a) / (2.0 * c) };
    Ok(pi_hat
        .iter()
        .zip(gamma)
        .map(|(h, g)| h + (g - mu) / rho2)
        .collect())
}

/// Closed-form clearing step; the result is exactly antisymmetric.
pub fn clearing_update_payment(pi: &PaymentMatrix, gamma: &PaymentMatrix, rho2: f64) -> PaymentMatrix {
    let m = pi.microgrids();
    let mut out = PaymentMatrix::zeros(m);
    for i in 0..m {
        for j in (i + 1)..m {
            let v = (rho2 * (pi.get(i, j) - pi.get(j, i)) - (gamma.get(i, j) - gamma.get(j, i))) / (2.0 * rho2);
            out.set(i, j, v);
            out.set(j, i, -v);
        }
    }
    out
}

/// `γ + ρ (π̂ − π)`
pub fn dual_update_payment(
    gamma: &PaymentMatrix,
    pi_hat: &PaymentMatrix,
    pi: &PaymentMatrix,
    rho2: f64,
) -> PaymentMatrix {
    let m = pi.microgrids();
    let mut out = gamma.clone();
    for i in 0..m {
        for j in (0..m).filter(|&j| j != i) {
            out.set(i, j, gamma.get(i, j) + rho2 * (pi_hat.get(i, j) - pi.get(i, j)));
        }
    }
    out
}

fn row_norm_sum(a: &PaymentMatrix, b: &PaymentMatrix) -> f64 {
    let m = a.microgrids();
    (0..m)
        .map(|i| {
            (0..m)
                .filter(|&j| j != i)
                .map(|j| (a.get(i, j) - b.get(i, j)).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum()
}

fn scaled(m: &PaymentMatrix, s: f64) -> PaymentMatrix {
    let n = m.microgrids();
    let mut out = PaymentMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, s * m.get(i, j));
        }
    }
    out
}

/// Coordinator side of the bargaining iteration.
#[derive(Debug, Clone)]
pub struct P2Coordinator {
    pub state: AdmmStateP2,
    /// Normalized surpluses.
    pub delta: Vec<f64>,
    /// Surplus scale `σ`.
    pub scale: f64,
    eps2: f64,
    max_iters: usize,
    raw_delta: Vec<f64>,
}

impl P2Coordinator {
    pub fn new(surplus: &Surplus, opts: &P2Options) -> Result<Self> {
        let n = surplus.len();
        if n < 2 {
            return Err(Error::NoBargain(format!("bargaining needs at least two traders, got {n}")));
        }
        let total = surplus.total();
        if !(total > 0.0) {
            return Err(Error::NoBargain(format!("total surplus {total} is not positive")));
        }
        if !(opts.rho2 > 0.0) {
            return Err(Error::Validation(format!("rho2 must be positive, got {}", opts.rho2)));
        }
        let scale = total / n as f64;
        Ok(Self {
            state: AdmmStateP2::new(n, opts.rho2),
            delta: surplus.delta.iter().map(|d| d / scale).collect(),
            scale,
            eps2: opts.eps2_for(n),
            max_iters: opts.max_iters,
            raw_delta: surplus.delta.clone(),
        })
    }

    pub fn eps2(&self) -> f64 {
        self.eps2
    }

    /// Absorbs normalized proposals (one row per trader) and returns the status
    /// once the run should stop.
    pub fn absorb(&mut self, rows: &[Vec<f64>]) -> Option<AdmmStatus> {
        let st = &mut self.state;
        let n = st.pi.microgrids();
        for (i, row) in rows.iter().enumerate() {
            for (v, j) in row.iter().zip((0..n).filter(|&j| j != i)) {
                st.pi.set(i, j, *v);
            }
        }
        let rho = st.rho2;
        let pi_hat = clearing_update_payment(&st.pi, &st.gamma, rho);
        st.gamma = dual_update_payment(&st.gamma, &pi_hat, &st.pi, rho);
        let primal = self.scale * row_norm_sum(&pi_hat, &st.pi);
        let dual = self.scale * row_norm_sum(&pi_hat, &st.pi_hat);
        st.pi_hat = pi_hat;
        st.k += 1;
        let net: Vec<f64> = st.pi_hat.net().iter().map(|v| v * self.scale).collect();
        st.residual_history.push(P2Residual {
            iteration: st.k,
            residual: primal,
            dual_residual: dual,
            nash_objective: nash_objective(&self.raw_delta, &net),
        });
        if primal <= self.eps2 && dual <= self.eps2 {
            Some(AdmmStatus::Converged)
        } else if st.k >= self.max_iters {
            Some(AdmmStatus::MaxIters)
        } else {
            None
        }
    }

    /// Cleared payments in currency units.
    pub fn payments(&self) -> PaymentMatrix {
        scaled(&self.state.pi_hat, self.scale)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P2Result {
    /// Cleared pairwise payments among the traders, in currency units.
    pub payments: PaymentMatrix,
    /// Net payment of each trader.
    pub net: Vec<f64>,
    pub iterations: usize,
    pub status: AdmmStatus,
    pub state: AdmmStateP2,
}

pub fn run_p2(surplus: &Surplus, opts: &P2Options) -> Result<P2Result> {
    let mut coord = P2Coordinator::new(surplus, opts)?;
    let n = surplus.len();
    let status = loop {
        let st = &coord.state;
        let rows = (0..n)
            .map(|i| {
                local_step_p2(
                    coord.delta[i],
                    &AdmmStateP2::row(&st.pi_hat, i),
                    &AdmmStateP2::row(&st.gamma, i),
                    st.rho2,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(status) = coord.absorb(&rows) {
            break status;
        }
    };
    Ok(finish_p2(&coord, status))
}

pub fn finish_p2(coord: &P2Coordinator, status: AdmmStatus) -> P2Result {
    let payments = coord.payments();
    P2Result {
        net: payments.net(),
        payments,
        iterations: coord.state.k,
        status,
        state: coord.state.clone(),
    }
}

/// Writes `iteration,residual,nash_objective` rows.
pub fn write_residual_csv<W: Write>(history: &[P2Residual], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |source| Error::Csv {
        path: "p2 residual log".into(),
        source,
    };
    w.write_record(["iteration", "residual", "nash_objective"]).map_err(err)?;
    for r in history {
        w.serialize((r.iteration, r.residual, r.nash_objective)).map_err(err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "p2 residual log".into(),
        source,
    })
}
