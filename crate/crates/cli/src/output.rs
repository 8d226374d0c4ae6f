//! CSV and JSON emission for command results.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use microtrade::clearinghouse::RunReport;
use microtrade::{payment, trading, MicrogridParams, Scenario, Schedule, TradeMatrix};

pub const SCHEDULE_COLUMNS: [&str; 11] = [
    "t",
    "wind_avail",
    "wind_use",
    "grid_buy",
    "grid_sell",
    "charge",
    "discharge",
    "storage_level",
    "inelastic",
    "elastic_total",
    "net_trade",
];

fn file_safe(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn schedule_path(dir: &Path, index: usize, mg: &MicrogridParams) -> PathBuf {
    dir.join(format!("schedule_{}_{}.csv", index + 1, file_safe(&mg.id)))
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))
}

/// One row per slot; `net_trade` is the net import from other microgrids.
pub fn write_schedule(path: &Path, scenario: &Scenario, i: usize, s: &Schedule, trades: &TradeMatrix) -> Result<()> {
    let mg = &scenario.microgrids[i];
    let net = if trades.microgrids() > 1 {
        trades.net_import(i)
    } else {
        vec![0.0; scenario.slots()]
    };
    let elastic = s.elastic_total();
    let mut w = writer(path)?;
    w.write_record(SCHEDULE_COLUMNS)?;
    for t in 0..scenario.slots() {
        w.serialize((
            t,
            mg.wind_available(t, &scenario.time),
            s.wind_use[t],
            s.grid_buy[t],
            s.grid_sell[t],
            s.charge[t],
            s.discharge[t],
            s.storage_level[t],
            mg.inelastic_load[t],
            elastic[t],
            net[t],
        ))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_schedules(dir: &Path, scenario: &Scenario, schedules: &[Schedule], trades: &TradeMatrix) -> Result<()> {
    for (i, s) in schedules.iter().enumerate() {
        write_schedule(&schedule_path(dir, i, &scenario.microgrids[i]), scenario, i, s, trades)?;
    }
    Ok(())
}

pub fn write_costs(path: &Path, scenario: &Scenario, costs: &[f64]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["id", "cost"])?;
    for (mg, c) in scenario.microgrids.iter().zip(costs) {
        w.serialize((&mg.id, c))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_table(path: &Path, report: &RunReport) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["id", "cost_no_trading", "cost_with_trading", "payment", "cost_plus_payment"])?;
    for row in report.table() {
        w.serialize((
            &row.id,
            row.cost_no_trading,
            row.cost_with_trading,
            row.payment,
            row.cost_plus_payment,
        ))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report(dir: &Path, scenario: &Scenario, report: &RunReport) -> Result<()> {
    let json = dir.join("report.json");
    fs::write(&json, report.to_json()).with_context(|| format!("cannot write {}", json.display()))?;
    write_table(&dir.join("table.csv"), report)?;
    write_schedules(dir, scenario, &report.schedules, &report.trades)?;
    let p1 = dir.join("p1_residuals.csv");
    let f = fs::File::create(&p1).with_context(|| format!("cannot create {}", p1.display()))?;
    trading::write_residual_csv(&report.p1.residuals, f)?;
    if let Some(p2) = &report.p2 {
        let path = dir.join("p2_residuals.csv");
        let f = fs::File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
        payment::write_residual_csv(&p2.residuals, f)?;
    }
    Ok(())
}

/// Fixed-width rendering of the cost table for the terminal.
pub fn render_table(report: &RunReport) -> String {
    let mut out = format!(
        "{:<10} {:>14} {:>14} {:>12} {:>14}\n",
        "microgrid", "no trading", "with trading", "payment", "cost+payment"
    );
    for r in report.table() {
        out.push_str(&format!(
            "{:<10} {:>14.4} {:>14.4} {:>12.4} {:>14.4}\n",
            r.id, r.cost_no_trading, r.cost_with_trading, r.payment, r.cost_plus_payment
        ));
    }
    out
}
