//! Scenario data, cost functions and feasibility checks for a set of microgrids.
//!
//! Every per-slot sequence is indexed by time slot `t = 0..T`. Rates given in kW are
//! converted to energy per slot by multiplying with [`TimeGrid::slot_hours`]; load
//! profiles and storage levels are already energy quantities (kWh per slot).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default absolute tolerance for [`validate`].
pub const VALIDATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub slots: usize,
    pub slot_hours: f64,
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self {
            slots: 24,
            slot_hours: 1.0,
        }
    }
}

impl TimeGrid {
    pub fn new(slots: usize, slot_hours: f64) -> Result<Self> {
        let tg = Self { slots, slot_hours };
        tg.check()?;
        Ok(tg)
    }

    fn check(&self) -> Result<()> {
        if self.slots == 0 {
            return Err(Error::Validation("time grid needs at least one slot".into()));
        }
        if !(self.slot_hours > 0.0) || !self.slot_hours.is_finite() {
            return Err(Error::Validation(format!(
                "slot duration must be positive, got {}",
                self.slot_hours
            )));
        }
        Ok(())
    }
}

/// Main-grid tariffs per slot, in currency per kWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPrices {
    pub buy: Vec<f64>,
    pub sell: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageParams {
    pub capacity_kwh: f64,
    /// Depth of discharge in (0, 1].
    pub dod: f64,
    pub max_charge_kw: f64,
    pub max_discharge_kw: f64,
    pub eff_charge: f64,
    pub eff_discharge: f64,
    pub amortized_cost_per_kwh: f64,
    pub initial_level_kwh: f64,
}

impl StorageParams {
    /// Lowest admissible energy level, `(1 - DoD) * capacity`.
    pub fn min_level(&self) -> f64 {
        (1.0 - self.dod) * self.capacity_kwh
    }

    /// Middle of the admissible band; the generator's default initial level.
    pub fn mid_band(capacity_kwh: f64, dod: f64) -> f64 {
        (1.0 - dod) * capacity_kwh + 0.5 * dod * capacity_kwh
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserParams {
    pub total_demand_kwh: f64,
    pub min_load: Vec<f64>,
    pub max_load: Vec<f64>,
    pub preferred: Vec<f64>,
    pub discomfort_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicrogridParams {
    pub id: String,
    pub wind_capacity_kw: f64,
    /// Fraction of installed wind capacity available in each slot.
    pub wind_fraction: Vec<f64>,
    pub max_buy_kw: f64,
    pub max_sell_kw: f64,
    pub inelastic_load: Vec<f64>,
    pub users: Vec<UserParams>,
    pub storage: StorageParams,
}

impl MicrogridParams {
    /// Wind energy available in slot `t`.
    pub fn wind_available(&self, t: usize, time: &TimeGrid) -> f64 {
        self.wind_fraction[t] * self.wind_capacity_kw * time.slot_hours
    }
}

/// A complete, validated problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub time: TimeGrid,
    pub prices: GridPrices,
    pub microgrids: Vec<MicrogridParams>,
}

impl Scenario {
    pub fn new(time: TimeGrid, prices: GridPrices, microgrids: Vec<MicrogridParams>) -> Result<Self> {
        let s = Self {
            time,
            prices,
            microgrids,
        };
        s.check()?;
        Ok(s)
    }

    pub fn slots(&self) -> usize {
        self.time.slots
    }

    pub fn num_microgrids(&self) -> usize {
        self.microgrids.len()
    }

    /// Verifies every structural invariant of the scenario.
    pub fn check(&self) -> Result<()> {
        self.time.check()?;
        let t = self.time.slots;
        check_series("prices.buy", &self.prices.buy, t, true)?;
        check_series("prices.sell", &self.prices.sell, t, true)?;
        if self.microgrids.is_empty() {
            return Err(Error::Validation("scenario has no microgrids".into()));
        }
        for (i, mg) in self.microgrids.iter().enumerate() {
            check_microgrid(mg, t).map_err(|e| e.context(format!("microgrids[{i}] ({})", mg.id)))?;
        }
        Ok(())
    }
}

fn check_series(name: &str, v: &[f64], t: usize, nonneg: bool) -> Result<()> {
    if v.len() != t {
        return Err(Error::dim(name, t, v.len()));
    }
    if let Some((k, x)) = v.iter().enumerate().find(|(_, x)| !x.is_finite() || (nonneg && **x < 0.0)) {
        return Err(Error::Validation(format!("{name}[{k}] = {x} is not a valid entry")));
    }
    Ok(())
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(Error::Validation(format!("{name} must be finite and >= 0, got {v}")));
    }
    Ok(())
}

fn check_microgrid(mg: &MicrogridParams, t: usize) -> Result<()> {
    check_nonneg("wind_capacity_kw", mg.wind_capacity_kw)?;
    check_nonneg("max_buy_kw", mg.max_buy_kw)?;
    check_nonneg("max_sell_kw", mg.max_sell_kw)?;
    check_series("wind_fraction", &mg.wind_fraction, t, true)?;
    if let Some((k, f)) = mg.wind_fraction.iter().enumerate().find(|(_, f)| **f > 1.0) {
        return Err(Error::Validation(format!("wind_fraction[{k}] = {f} exceeds 1")));
    }
    check_series("inelastic_load", &mg.inelastic_load, t, true)?;
    for (n, u) in mg.users.iter().enumerate() {
        check_user(u, t).map_err(|e| e.context(format!("users[{n}]")))?;
    }
    check_storage(&mg.storage).map_err(|e| e.context("storage"))
}

fn check_user(u: &UserParams, t: usize) -> Result<()> {
    check_series("min_load", &u.min_load, t, true)?;
    check_series("max_load", &u.max_load, t, true)?;
    check_series("preferred", &u.preferred, t, false)?;
    check_nonneg("discomfort_weight", u.discomfort_weight)?;
    check_nonneg("total_demand_kwh", u.total_demand_kwh)?;
    for k in 0..t {
        if u.min_load[k] > u.max_load[k] {
            return Err(Error::Validation(format!(
                "min_load[{k}] = {} exceeds max_load[{k}] = {}",
                u.min_load[k], u.max_load[k]
            )));
        }
    }
    let lo: f64 = u.min_load.iter().sum();
    let hi: f64 = u.max_load.iter().sum();
    let slack = 1e-9 * hi.max(1.0);
    if u.total_demand_kwh < lo - slack || u.total_demand_kwh > hi + slack {
        return Err(Error::Infeasible(format!(
            "total demand {} outside [{lo}, {hi}] implied by per-slot bounds",
            u.total_demand_kwh
        )));
    }
    Ok(())
}

fn check_storage(s: &StorageParams) -> Result<()> {
    check_nonneg("capacity_kwh", s.capacity_kwh)?;
    check_nonneg("max_charge_kw", s.max_charge_kw)?;
    check_nonneg("max_discharge_kw", s.max_discharge_kw)?;
    check_nonneg("amortized_cost_per_kwh", s.amortized_cost_per_kwh)?;
    if !(s.dod > 0.0 && s.dod <= 1.0) {
        return Err(Error::Validation(format!("dod must lie in (0, 1], got {}", s.dod)));
    }
    for (name, e) in [("eff_charge", s.eff_charge), ("eff_discharge", s.eff_discharge)] {
        if !(e > 0.0 && e <= 1.0) {
            return Err(Error::Validation(format!("{name} must lie in (0, 1], got {e}")));
        }
    }
    let lo = s.min_level();
    let tol = 1e-9 * s.capacity_kwh.max(1.0);
    if s.initial_level_kwh < lo - tol || s.initial_level_kwh > s.capacity_kwh + tol {
        return Err(Error::Validation(format!(
            "initial level {} outside [{lo}, {}]",
            s.initial_level_kwh, s.capacity_kwh
        )));
    }
    Ok(())
}

/// Internal decisions of one microgrid over the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub wind_use: Vec<f64>,
    pub grid_buy: Vec<f64>,
    pub grid_sell: Vec<f64>,
    /// One series per user.
    pub elastic: Vec<Vec<f64>>,
    pub charge: Vec<f64>,
    pub discharge: Vec<f64>,
    pub storage_level: Vec<f64>,
}

impl Schedule {
    pub fn zeros(slots: usize, users: usize) -> Self {
        Self {
            wind_use: vec![0.0; slots],
            grid_buy: vec![0.0; slots],
            grid_sell: vec![0.0; slots],
            elastic: vec![vec![0.0; slots]; users],
            charge: vec![0.0; slots],
            discharge: vec![0.0; slots],
            storage_level: vec![0.0; slots],
        }
    }

    pub fn slots(&self) -> usize {
        self.grid_buy.len()
    }

    /// Aggregate elastic consumption per slot.
    pub fn elastic_total(&self) -> Vec<f64> {
        let mut tot = vec![0.0; self.slots()];
        for x in &self.elastic {
            for (a, b) in tot.iter_mut().zip(x) {
                *a += b;
            }
        }
        tot
    }
}

/// Bilateral energy exchange `e[i][j][t]`; positive when `i` buys from `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeMatrix {
    microgrids: usize,
    slots: usize,
    data: Vec<f64>,
}

impl TradeMatrix {
    pub fn zeros(microgrids: usize, slots: usize) -> Self {
        Self {
            microgrids,
            slots,
            data: vec![0.0; microgrids * microgrids * slots],
        }
    }

    pub fn microgrids(&self) -> usize {
        self.microgrids
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    fn idx(&self, i: usize, j: usize, t: usize) -> usize {
        (i * self.microgrids + j) * self.slots + t
    }

    pub fn get(&self, i: usize, j: usize, t: usize) -> f64 {
        self.data[self.idx(i, j, t)]
    }

    pub fn set(&mut self, i: usize, j: usize, t: usize, v: f64) {
        debug_assert!(i != j || v == 0.0);
        let k = self.idx(i, j, t);
        self.data[k] = v;
    }

    /// Series `e[i][j][·]`.
    pub fn pair(&self, i: usize, j: usize) -> &[f64] {
        let k = self.idx(i, j, 0);
        &self.data[k..k + self.slots]
    }

    pub fn pair_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let k = self.idx(i, j, 0);
        &mut self.data[k..k + self.slots]
    }

    /// Net energy received by `i` in every slot, `Σ_j e[i][j][t]`.
    pub fn net_import(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.slots];
        for j in (0..self.microgrids).filter(|&j| j != i) {
            for (o, v) in out.iter_mut().zip(self.pair(i, j)) {
                *o += v;
            }
        }
        out
    }

    /// Series of `i` against each counterpart, in increasing counterpart order.
    pub fn row(&self, i: usize) -> Vec<Vec<f64>> {
        (0..self.microgrids)
            .filter(|&j| j != i)
            .map(|j| self.pair(i, j).to_vec())
            .collect()
    }

    /// `max |e[i][j][t] + e[j][i][t]|`
    pub fn antisymmetry_residual(&self) -> f64 {
        let mut r: f64 = 0.0;
        for i in 0..self.microgrids {
            for j in (i + 1)..self.microgrids {
                for t in 0..self.slots {
                    r = r.max((self.get(i, j, t) + self.get(j, i, t)).abs());
                }
            }
        }
        r
    }

    /// `max_{j,t} |e[i][j][t]|`
    pub fn max_abs_row(&self, i: usize) -> f64 {
        (0..self.microgrids)
            .filter(|&j| j != i)
            .flat_map(|j| self.pair(i, j).iter())
            .fold(0.0, |a, v| a.max(v.abs()))
    }
}

/// Bilateral payments `pi[i][j]`; positive when `i` pays `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaymentMatrix {
    microgrids: usize,
    pi: Vec<f64>,
}

impl PaymentMatrix {
    pub fn zeros(microgrids: usize) -> Self {
        Self {
            microgrids,
            pi: vec![0.0; microgrids * microgrids],
        }
    }

    pub fn microgrids(&self) -> usize {
        self.microgrids
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pi[i * self.microgrids + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.pi[i * self.microgrids + j] = v;
    }

    /// Net payment `C_e(π_i) = Σ_j π[i][j]` of every microgrid.
    pub fn net(&self) -> Vec<f64> {
        (0..self.microgrids)
            .map(|i| (0..self.microgrids).filter(|&j| j != i).map(|j| self.get(i, j)).sum())
            .collect()
    }

    pub fn antisymmetry_residual(&self) -> f64 {
        let mut r: f64 = 0.0;
        for i in 0..self.microgrids {
            for j in (i + 1)..self.microgrids {
                r = r.max((self.get(i, j) + self.get(j, i)).abs());
            }
        }
        r
    }
}

fn same_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::dim(what, a, b));
    }
    Ok(())
}

/// Energy cost against the main grid, `Σ_t (p_b q_b − p_s q_s)`.
pub fn energy_cost(schedule: &Schedule, prices: &GridPrices) -> Result<f64> {
    let t = prices.buy.len();
    same_len("sell prices", t, prices.sell.len())?;
    same_len("grid_buy", t, schedule.grid_buy.len())?;
    same_len("grid_sell", t, schedule.grid_sell.len())?;
    Ok((0..t)
        .map(|k| prices.buy[k] * schedule.grid_buy[k] - prices.sell[k] * schedule.grid_sell[k])
        .sum())
}

/// Quadratic discomfort `β Σ_t (x_t − y_t)²`.
pub fn discomfort_cost(elastic: &[f64], user: &UserParams) -> Result<f64> {
    same_len("elastic load", user.preferred.len(), elastic.len())?;
    Ok(user.discomfort_weight
        * elastic
            .iter()
            .zip(&user.preferred)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>())
}

/// Degradation cost `c_s (Σ r_c + Σ r_d)`.
pub fn storage_cost(charge: &[f64], discharge: &[f64], storage: &StorageParams) -> Result<f64> {
    same_len("discharge", charge.len(), discharge.len())?;
    if let Some(v) = charge.iter().chain(discharge).find(|v| **v < 0.0) {
        return Err(Error::Validation(format!(
            "charge and discharge must be nonnegative, found {v}"
        )));
    }
    Ok(storage.amortized_cost_per_kwh * (charge.iter().sum::<f64>() + discharge.iter().sum::<f64>()))
}

/// Storage levels `s_1..s_T` from `s_0` under `s_t = s_{t−1} + η_c r_c − r_d / η_d`.
pub fn storage_trajectory(charge: &[f64], discharge: &[f64], storage: &StorageParams) -> Vec<f64> {
    let mut level = storage.initial_level_kwh;
    charge
        .iter()
        .zip(discharge)
        .map(|(c, d)| {
            level += storage.eff_charge * c - d / storage.eff_discharge;
            level
        })
        .collect()
}

/// Energy, discomfort and storage cost of one microgrid.
pub fn operating_cost(schedule: &Schedule, mg: &MicrogridParams, prices: &GridPrices) -> Result<f64> {
    same_len("users", mg.users.len(), schedule.elastic.len())?;
    let mut total = energy_cost(schedule, prices)?;
    for (x, u) in schedule.elastic.iter().zip(&mg.users) {
        total += discomfort_cost(x, u)?;
    }
    total += storage_cost(&schedule.charge, &schedule.discharge, &mg.storage)?;
    Ok(total)
}

/// Gradient of [`operating_cost`] laid out like a [`Schedule`]. `storage_level` is
/// not a cost argument and its gradient is zero.
pub fn operating_cost_gradient(schedule: &Schedule, mg: &MicrogridParams, prices: &GridPrices) -> Result<Schedule> {
    same_len("users", mg.users.len(), schedule.elastic.len())?;
    let t = schedule.slots();
    same_len("buy prices", t, prices.buy.len())?;
    let cs = mg.storage.amortized_cost_per_kwh;
    Ok(Schedule {
        wind_use: vec![0.0; t],
        grid_buy: prices.buy.clone(),
        grid_sell: prices.sell.iter().map(|p| -p).collect(),
        elastic: schedule
            .elastic
            .iter()
            .zip(&mg.users)
            .map(|(x, u)| {
                x.iter()
                    .zip(&u.preferred)
                    .map(|(x, y)| 2.0 * u.discomfort_weight * (x - y))
                    .collect()
            })
            .collect(),
        charge: vec![cs; t],
        discharge: vec![cs; t],
        storage_level: vec![0.0; t],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Dimension,
    WindBound,
    GridBuyBound,
    GridSellBound,
    UserTotal,
    UserBounds,
    ChargeBound,
    DischargeBound,
    StorageDynamics,
    StorageBand,
    TerminalLevel,
    Balance,
    SaleAvailability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: ConstraintKind,
    pub slot: Option<usize>,
    /// User index for per-user constraints.
    pub user: Option<usize>,
    pub residual: f64,
}

/// Lists every constraint of microgrid `mg` that `schedule` violates by more than
/// `tol`. `trades` holds one series per counterpart; when empty the plain
/// supply-demand balance is checked.
pub fn validate(
    schedule: &Schedule,
    trades: &[Vec<f64>],
    mg: &MicrogridParams,
    time: &TimeGrid,
    tol: f64,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let t_len = time.slots;
    let dims_ok = [
        schedule.wind_use.len(),
        schedule.grid_buy.len(),
        schedule.grid_sell.len(),
        schedule.charge.len(),
        schedule.discharge.len(),
        schedule.storage_level.len(),
    ]
    .iter()
    .all(|&l| l == t_len)
        && schedule.elastic.len() == mg.users.len()
        && schedule.elastic.iter().all(|x| x.len() == t_len)
        && trades.iter().all(|e| e.len() == t_len);
    if !dims_ok {
        out.push(Violation {
            constraint: ConstraintKind::Dimension,
            slot: None,
            user: None,
            residual: f64::INFINITY,
        });
        return out;
    }

    let mut push = |c: ConstraintKind, slot: Option<usize>, user: Option<usize>, r: f64| {
        if r > tol {
            out.push(Violation {
                constraint: c,
                slot,
                user,
                residual: r,
            });
        }
    };
    let box_excess = |v: f64, lo: f64, hi: f64| (lo - v).max(v - hi).max(0.0);
    let h = time.slot_hours;
    let st = &mg.storage;

    for t in 0..t_len {
        let avail = mg.wind_available(t, time);
        push(ConstraintKind::WindBound, Some(t), None, box_excess(schedule.wind_use[t], 0.0, avail));
        push(
            ConstraintKind::GridBuyBound,
            Some(t),
            None,
            box_excess(schedule.grid_buy[t], 0.0, mg.max_buy_kw * h),
        );
        push(
            ConstraintKind::GridSellBound,
            Some(t),
            None,
            box_excess(schedule.grid_sell[t], 0.0, mg.max_sell_kw * h),
        );
        push(
            ConstraintKind::ChargeBound,
            Some(t),
            None,
            box_excess(schedule.charge[t], 0.0, st.max_charge_kw * h),
        );
        push(
            ConstraintKind::DischargeBound,
            Some(t),
            None,
            box_excess(schedule.discharge[t], 0.0, st.max_discharge_kw * h),
        );
        let prev = if t == 0 {
            st.initial_level_kwh
        } else {
            schedule.storage_level[t - 1]
        };
        let dyn_res = schedule.storage_level[t]
            - (prev + st.eff_charge * schedule.charge[t] - schedule.discharge[t] / st.eff_discharge);
        push(ConstraintKind::StorageDynamics, Some(t), None, dyn_res.abs());
        push(
            ConstraintKind::StorageBand,
            Some(t),
            None,
            box_excess(schedule.storage_level[t], st.min_level(), st.capacity_kwh),
        );
        for (n, (x, u)) in schedule.elastic.iter().zip(&mg.users).enumerate() {
            push(
                ConstraintKind::UserBounds,
                Some(t),
                Some(n),
                box_excess(x[t], u.min_load[t], u.max_load[t]),
            );
        }
        let imports: f64 = trades.iter().map(|e| e[t]).sum();
        let elastic: f64 = schedule.elastic.iter().map(|x| x[t]).sum();
        let supply = schedule.wind_use[t] + schedule.grid_buy[t] + schedule.discharge[t] + imports;
        let demand = schedule.grid_sell[t] + schedule.charge[t] + mg.inelastic_load[t] + elastic;
        push(ConstraintKind::Balance, Some(t), None, (supply - demand).abs());
        push(
            ConstraintKind::SaleAvailability,
            Some(t),
            None,
            schedule.grid_sell[t] - (avail - schedule.wind_use[t] + schedule.storage_level[t]),
        );
    }
    for (n, (x, u)) in schedule.elastic.iter().zip(&mg.users).enumerate() {
        let total: f64 = x.iter().sum();
        push(ConstraintKind::UserTotal, None, Some(n), (total - u.total_demand_kwh).abs());
    }
    push(
        ConstraintKind::TerminalLevel,
        Some(t_len - 1),
        None,
        (schedule.storage_level[t_len - 1] - st.initial_level_kwh).abs(),
    );
    out
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    fn two_slot(buy: [f64; 2], sell: [f64; 2]) -> Schedule {
        let mut s = Schedule::zeros(2, 0);
        s.grid_buy = buy.to_vec();
        s.grid_sell = sell.to_vec();
        s
    }

    #[test]
    fn energy_cost_examples() {
        let p = GridPrices {
            buy: vec![0.1, 0.2],
            sell: vec![0.05, 0.05],
        };
        let c = energy_cost(&two_slot([10.0, 0.0], [0.0, 5.0]), &p).unwrap();
        assert!((c - 0.75).abs() < 1e-15);
        assert_eq!(energy_cost(&two_slot([0.0; 2], [0.0; 2]), &p).unwrap(), 0.0);
        let flat = GridPrices {
            buy: vec![0.1, 0.1],
            sell: vec![0.1, 0.1],
        };
        assert_eq!(energy_cost(&two_slot([5.0; 2], [5.0; 2]), &flat).unwrap(), 0.0);
    }

    #[test]
    fn energy_cost_rejects_length_mismatch() {
        let p = GridPrices {
            buy: vec![0.1],
            sell: vec![0.1],
        };
        assert!(matches!(
            energy_cost(&two_slot([1.0; 2], [0.0; 2]), &p),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn discomfort_examples() {
        let mut u = user(2, 3.0, 2.0);
        assert_eq!(discomfort_cost(&u.preferred.clone(), &u).unwrap(), 0.0);
        assert!((discomfort_cost(&[4.0, 2.0], &u).unwrap() - 4.0).abs() < 1e-15);
        u = user(1, 0.0, 0.0);
        assert_eq!(discomfort_cost(&[3.0], &u).unwrap(), 0.0);
        assert!(discomfort_cost(&[1.0, 2.0], &u).is_err());
    }

    #[test]
    fn storage_cost_examples() {
        let st = storage(100.0);
        assert!((storage_cost(&[10.0, 0.0], &[0.0, 10.0], &st).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(storage_cost(&[0.0; 3], &[0.0; 3], &st).unwrap(), 0.0);
        assert!((storage_cost(&[1.0; 24], &[0.0; 24], &st).unwrap() - 0.24).abs() < 1e-12);
        assert!(matches!(
            storage_cost(&[-1.0], &[0.0], &st),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn trajectory_examples() {
        let mut st = storage(200.0);
        st.initial_level_kwh = 100.0;
        assert!((storage_trajectory(&[10.0], &[0.0], &st)[0] - 109.5).abs() < 1e-12);
        assert!((storage_trajectory(&[0.0], &[9.5], &st)[0] - 90.0).abs() < 1e-12);
        assert_eq!(storage_trajectory(&[0.0; 4], &[0.0; 4], &st), vec![100.0; 4]);
    }

    #[test]
    fn operating_cost_sums_parts() {
        let mut mg = microgrid(2);
        mg.users = vec![user(2, 0.0, 2.0)];
        mg.users[0].preferred = vec![0.0, 0.0];
        let prices = GridPrices {
            buy: vec![0.1, 0.2],
            sell: vec![0.05, 0.05],
        };
        let mut s = two_slot([10.0, 0.0], [0.0, 5.0]);
        s.elastic = vec![vec![1.0, -1.0]];
        s.charge = vec![10.0, 0.0];
        s.discharge = vec![0.0, 10.0];
        let c = operating_cost(&s, &mg, &prices).unwrap();
        assert!((c - 4.95).abs() < 1e-12);
        let zero = Schedule::zeros(2, 1);
        mg.users[0].discomfort_weight = 0.0;
        assert_eq!(operating_cost(&zero, &mg, &prices).unwrap(), 0.0);
    }

    fn feasible(mg: &MicrogridParams, time: &TimeGrid) -> Schedule {
        // Users at preference, storage idle, grid covers the remainder.
        let t = time.slots;
        let mut s = Schedule::zeros(t, mg.users.len());
        s.elastic = mg.users.iter().map(|u| u.preferred.clone()).collect();
        s.storage_level = vec![mg.storage.initial_level_kwh; t];
        let el = s.elastic_total();
        for k in 0..t {
            let need = mg.inelastic_load[k] + el[k];
            let w = mg.wind_available(k, time).min(need);
            s.wind_use[k] = w;
            s.grid_buy[k] = need - w;
        }
        s
    }

    #[test]
    fn validate_accepts_feasible_and_names_violations() {
        let time = TimeGrid::default();
        let mg = microgrid(24);
        let s = feasible(&mg, &time);
        assert!(validate(&s, &[], &mg, &time, 1e-6).is_empty());

        let mut bad = s.clone();
        bad.wind_use[5] = mg.wind_available(5, &time) + 1.0;
        let v = validate(&bad, &[], &mg, &time, 1e-6);
        assert!(v
            .iter()
            .any(|x| x.constraint == ConstraintKind::WindBound && x.slot == Some(5)));

        let mut bad = s.clone();
        bad.storage_level[23] += 5.0;
        let v = validate(&bad, &[], &mg, &time, 1e-6);
        let term = v
            .iter()
            .find(|x| x.constraint == ConstraintKind::TerminalLevel)
            .unwrap();
        assert!((term.residual - 5.0).abs() < 1e-12);
    }

    #[test]
    fn validate_uses_trades_in_balance() {
        let time = TimeGrid::default();
        let mg = microgrid(24);
        let mut s = feasible(&mg, &time);
        s.grid_buy[3] -= 2.0;
        let mut e = vec![0.0; 24];
        e[3] = 2.0;
        assert!(validate(&s, &[e.clone()], &mg, &time, 1e-6).is_empty());
        let v = validate(&s, &[], &mg, &time, 1e-6);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].constraint, ConstraintKind::Balance);
    }

    #[test]
    fn scenario_rejects_bad_user_totals() {
        let mut mg = microgrid(24);
        mg.users[0].total_demand_kwh = 1e6;
        let err = Scenario::new(
            TimeGrid::default(),
            GridPrices {
                buy: vec![0.2; 24],
                sell: vec![0.1; 24],
            },
            vec![mg],
        )
        .unwrap_err();
        assert!(matches!(err.root(), Error::Infeasible(_)));
    }

    #[test]
    fn trade_matrix_helpers() {
        let mut e = TradeMatrix::zeros(3, 2);
        e.set(0, 1, 0, 2.0);
        e.set(1, 0, 0, -2.0);
        e.set(0, 2, 1, -1.0);
        e.set(2, 0, 1, 1.5);
        assert_eq!(e.net_import(0), vec![2.0, -1.0]);
        assert!((e.antisymmetry_residual() - 0.5).abs() < 1e-15);
        assert_eq!(e.max_abs_row(0), 2.0);
        assert_eq!(e.row(0), vec![vec![2.0, 0.0], vec![0.0, -1.0]]);
    }
}
