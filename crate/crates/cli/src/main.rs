use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chlab::dynamics::{solve, RunStatus};
use chlab::experiments::{report_from_runs, synth_initial, InitialDatum, SweepRuns, VerdictStatus};
use chlab::io::{emit_report, norms_csv, read_config, read_snapshot, write_snapshot, RunConfig};
use chlab::lp::hs_norm_value;
use chlab::oracles::{peakon_field, CharacteristicSolution, VALIDITY_FRACTION};
use chlab::verify::{run_suite, Suite};
use chlab::Error;
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

#[derive(Parser)]
#[command(
    name = "chlab",
    version,
    about = "Filtered Camassa–Holm / Burgers zero-filter laboratory"
)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single run: snapshots and norm series.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Zero-filter study over the configured alpha and n grids.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Run an invariant suite; nonzero exit on failure.
    Verify {
        #[arg(long, value_enum)]
        suite: SuiteArg,
    },
    /// Print the H^s norm of a snapshot.
    Norms {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long)]
        s: f64,
    },
    /// Write reference solutions as snapshots.
    Oracle {
        #[arg(long, value_enum)]
        kind: OracleKind,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Spectral,
    Lp,
    Oracle,
    Conservation,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Spectral => Suite::Spectral,
            SuiteArg::Lp => Suite::Lp,
            SuiteArg::Oracle => Suite::Oracle,
            SuiteArg::Conservation => Suite::Conservation,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleKind {
    Characteristics,
    Peakon,
}

const ASSERTION_FAILED: u8 = 1;
const USAGE_ERROR: u8 = 2;

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Parse { .. }
        | Error::Config(_)
        | Error::Io { .. }
        | Error::Format(_)
        | Error::InvalidGrid(_)
        | Error::InvalidArgument(_)
        | Error::OutOfRange { .. } => USAGE_ERROR,
        _ => ASSERTION_FAILED,
    }
}

fn output_dir(cfg: &RunConfig, out: Option<PathBuf>) -> chlab::Result<PathBuf> {
    let dir = out.unwrap_or_else(|| cfg.out_dir.clone());
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> chlab::Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run_solve(config: &Path, out: Option<PathBuf>) -> chlab::Result<u8> {
    let cfg = read_config(config)?;
    let dir = output_dir(&cfg, out)?;
    let u0 = synth_initial(&cfg.u0, &cfg.grid()?)?;
    let traj = solve(&u0, &cfg.model_params(), &cfg.step_control())?;
    for (i, f) in traj.fields().iter().enumerate() {
        write_snapshot(f, &dir.join(format!("snapshot_{i:05}.chs")))?;
    }
    write_text(&dir.join("norms_solve.csv"), &norms_csv(&traj.records))?;
    info!("{} steps, {} snapshots", traj.steps, traj.fields().len());
    println!("status: {}", traj.status.label());
    if let Some(t) = traj.status.time() {
        println!("stopped at t = {t}");
    }
    Ok(match traj.status {
        RunStatus::Unstable { .. } => ASSERTION_FAILED,
        _ => 0,
    })
}

fn run_sweep(config: &Path, out: Option<PathBuf>, jobs: usize) -> chlab::Result<u8> {
    let cfg = read_config(config)?;
    let dir = output_dir(&cfg, out)?;
    let runs = SweepRuns::run(&cfg.sweep_config(jobs))?;
    let report = report_from_runs(&runs)?;
    let written = emit_report(&report, &runs.series(), &dir, &cfg.formats)?;
    for v in &report.verdicts {
        let tag = match v.status {
            VerdictStatus::Pass => "PASS",
            VerdictStatus::Fail => "FAIL",
            VerdictStatus::Inconclusive => "INCONCLUSIVE",
            VerdictStatus::NotApplicable => "N/A",
        };
        println!("{tag:<12} {}: {}", v.name, v.detail);
    }
    info!("wrote {} files under {}", written.len(), dir.display());
    Ok(if report.any_failed() {
        ASSERTION_FAILED
    } else {
        0
    })
}

fn run_verify(suite: Suite) -> chlab::Result<u8> {
    let checks = run_suite(suite)?;
    let mut failed = false;
    for c in &checks {
        println!(
            "{} {}.{}: {:e} (tolerance {:e})",
            if c.passed { "PASS" } else { "FAIL" },
            suite.name(),
            c.name,
            c.value,
            c.tolerance
        );
        failed |= !c.passed;
    }
    Ok(if failed { ASSERTION_FAILED } else { 0 })
}

fn run_norms(snapshot: &Path, s: f64) -> chlab::Result<u8> {
    let f = read_snapshot(snapshot)?;
    println!("{}", hs_norm_value(&f, s)?);
    Ok(0)
}

fn run_oracle(kind: OracleKind, config: &Path, out: Option<PathBuf>) -> chlab::Result<u8> {
    let cfg = read_config(config)?;
    let dir = output_dir(&cfg, out)?;
    let grid = cfg.grid()?;
    let samples = 10;
    let times = (0..=samples).map(|k| cfg.t_end * k as f64 / samples as f64);
    match kind {
        OracleKind::Characteristics => {
            let u0 = synth_initial(&cfg.u0, &grid)?;
            let sol = CharacteristicSolution::from_field(&u0)?;
            if cfg.t_end >= VALIDITY_FRACTION * sol.shock_time() {
                return Err(Error::Config(format!(
                    "t_end = {} is past {VALIDITY_FRACTION} of the shock time {}",
                    cfg.t_end,
                    sol.shock_time()
                )));
            }
            println!("shock time: {}", sol.shock_time());
            for (i, t) in times.enumerate() {
                let f = sol.field(&grid, t)?.with_time(t).with_alpha(0.0);
                write_snapshot(&f, &dir.join(format!("characteristics_{i:05}.chs")))?;
            }
        }
        OracleKind::Peakon => {
            let (c, alpha) = match cfg.u0 {
                InitialDatum::PeakonSmoothed { c, alpha, .. } => (c, alpha),
                _ => (1.0, cfg.alpha),
            };
            for (i, t) in times.enumerate() {
                let f = peakon_field(c, alpha, t, &grid)?
                    .with_time(t)
                    .with_alpha(alpha);
                write_snapshot(&f, &dir.join(format!("peakon_{i:05}.chs")))?;
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Solve { config, out } => run_solve(&config, out),
        Command::Sweep { config, out, jobs } => run_sweep(&config, out, jobs),
        Command::Verify { suite } => run_verify(suite.into()),
        Command::Norms { snapshot, s } => run_norms(&snapshot, s),
        Command::Oracle { kind, config, out } => run_oracle(kind, &config, out),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
