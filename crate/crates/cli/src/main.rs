//! `microtrade` command line driver.
//!
//! Exit codes: 0 on success, 2 for unusable input, 3 when an iteration does not
//! converge or a requested certification fails.

mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use microtrade::benchmark::solve_all;
use microtrade::clearinghouse::{run_algorithm1, RunOptions};
use microtrade::oracle::{centralized_p1, certify};
use microtrade::scenario_file::load;
use microtrade::synth::{generate, GenOptions};
use microtrade::trading::{AdmmStatus, RhoSchedule};
use microtrade::Error;

#[derive(Parser)]
#[command(name = "microtrade", version, about = "Cooperative energy trading among microgrids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Schedule {
    Fixed,
    OneOverK,
    Balanced,
}

#[derive(Subcommand)]
enum Command {
    /// Standalone cost and schedule of every microgrid.
    Benchmark {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trading and payment bargaining end to end.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rho1: Option<f64>,
        #[arg(long)]
        rho2: Option<f64>,
        #[arg(long)]
        eps1: Option<f64>,
        #[arg(long)]
        eps2: Option<f64>,
        /// Iteration cap applied to both phases.
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long, value_enum, default_value = "balanced")]
        rho_schedule: Schedule,
        /// Check the result against the centralized optimum and the analytic split.
        #[arg(long)]
        certify: bool,
        #[arg(long, default_value_t = 1e-3)]
        tol_rel: f64,
    },
    /// Writes a synthetic scenario file.
    Gen {
        #[arg(long, default_value_t = 3)]
        microgrids: usize,
        #[arg(long, default_value_t = 3)]
        users: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 24)]
        slots: usize,
        /// Output path, `-` for stdout.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Outcome that maps to exit code 3.
#[derive(Debug)]
struct Unconverged(String);

impl std::fmt::Display for Unconverged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Unconverged {}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn benchmark(scenario: &Path, out: &Path) -> Result<()> {
    let sc = load(scenario)?;
    let results = solve_all(&sc, 1e-8)?;
    ensure_dir(out)?;
    let costs: Vec<f64> = results.iter().map(|r| r.cost).collect();
    output::write_costs(&out.join("costs.csv"), &sc, &costs)?;
    let schedules: Vec<_> = results.into_iter().map(|r| r.schedule).collect();
    let none = microtrade::TradeMatrix::zeros(sc.num_microgrids(), sc.slots());
    output::write_schedules(out, &sc, &schedules, &none)?;
    for (mg, c) in sc.microgrids.iter().zip(&costs) {
        println!("{:<10} {c:>14.4}", mg.id);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run(
    scenario: &Path,
    out: &Path,
    rho1: Option<f64>,
    rho2: Option<f64>,
    eps1: Option<f64>,
    eps2: Option<f64>,
    max_iters: Option<usize>,
    schedule: Schedule,
    check: bool,
    tol_rel: f64,
) -> Result<()> {
    let sc = load(scenario)?;
    let mut opts = RunOptions::default();
    if let Some(r) = rho1 {
        opts.p1.rho1 = r;
    }
    if let Some(r) = rho2 {
        opts.p2.rho2 = r;
    }
    opts.p1.eps1 = eps1.or(opts.p1.eps1);
    opts.p2.eps2 = eps2.or(opts.p2.eps2);
    if let Some(n) = max_iters {
        opts.p1.max_iters = n;
        opts.p2.max_iters = n;
    }
    opts.p1.rho_schedule = match schedule {
        Schedule::Fixed => RhoSchedule::Fixed,
        Schedule::OneOverK => RhoSchedule::OneOverK,
        Schedule::Balanced => RhoSchedule::default(),
    };

    let report = run_algorithm1(&sc, &opts)?;
    ensure_dir(out)?;
    output::write_report(out, &sc, &report)?;
    print!("{}", output::render_table(&report));
    println!(
        "trading: {} iterations ({:?}); bargaining: {}; {:.2}s",
        report.p1.iterations,
        report.p1.status,
        report
            .p2
            .as_ref()
            .map_or("skipped".to_string(), |p| format!("{} iterations ({:?})", p.iterations, p.status)),
        report.wall_clock_s
    );
    if let Some(d) = &report.diagnostic {
        println!("note: {d}");
    }

    if check {
        let central = centralized_p1(&sc, 1e-9).context("centralized reference solve")?;
        let cert = certify(&report, &central, tol_rel);
        let path = out.join("certificate.json");
        fs::write(&path, serde_json::to_string_pretty(&cert)?)
            .with_context(|| format!("cannot write {}", path.display()))?;
        if !cert.pass {
            return Err(Unconverged(format!("certification failed: {}", cert.failures.join("; "))).into());
        }
        println!("certified: relative gap {:.2e}", cert.objective_gap);
    }
    let stalled = report.p1.status != AdmmStatus::Converged
        || report.p2.as_ref().is_some_and(|p| p.status != AdmmStatus::Converged);
    if stalled {
        return Err(Unconverged("iteration limit reached before convergence".into()).into());
    }
    Ok(())
}

fn gen(opts: GenOptions, out: &Path) -> Result<()> {
    let file = generate(&opts)?;
    let json = file.to_json();
    if out == Path::new("-") {
        println!("{json}");
    } else {
        fs::write(out, json + "\n").with_context(|| format!("cannot write {}", out.display()))?;
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Unconverged>().is_some() {
        return 3;
    }
    match err.downcast_ref::<Error>().map(Error::root) {
        Some(Error::Qp(_)) | Some(Error::NoBargain(_)) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Benchmark { scenario, out } => benchmark(&scenario, &out),
        Command::Run {
            scenario,
            out,
            rho1,
            rho2,
            eps1,
            eps2,
            max_iters,
            rho_schedule,
            certify,
            tol_rel,
        } => run(
            &scenario,
            &out,
            rho1,
            rho2,
            eps1,
            eps2,
            max_iters,
            rho_schedule,
            certify,
            tol_rel,
        ),
        Command::Gen {
            microgrids,
            users,
            seed,
            slots,
            out,
        } => gen(
            GenOptions {
                microgrids,
                users,
                seed,
                slots,
            },
            &out,
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
