//! Command-line front end. [`run`] returns the process exit code:
//! 0 on success, 1 on any error, 2 when a verification tolerance fails.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bounds::BoundReport;
use crate::error::{Error, Result};
use crate::experiments::{self, fmt_f64, ExperimentConfig, ExperimentKind};
use crate::selftest;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_TOLERANCE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "sgd-interp", version, about = "Exact and simulated risk of SGD, GD and ridge on interpolating least squares")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set algo.eta=[0.1]`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads, 0 = all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// GD and SGD risk along the checkpoint grid.
    RunRiskCurve(Common),
    /// Iterations and gradients needed to reach target risks.
    RunComplexity(Common),
    /// Recursion vs brute force vs Monte Carlo on small instances.
    VerifyDecomposition(Common),
    /// Evaluate the risk bounds at `t_max`.
    ComputeBounds(Common),
    /// Run the built-in invariant suite.
    Selftest(Common),
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    if !path.is_file() {
        return Err(Error::Config(format!("config file {} not found", path.display())));
    }
    ExperimentConfig::load(path, &common.set)
}

fn expect_kind(cfg: &ExperimentConfig, kind: ExperimentKind, sub: &str) -> Result<()> {
    if cfg.experiment.kind != kind {
        return Err(Error::Config(format!(
            "{sub} needs experiment.kind = {:?}, config has {:?}",
            kind, cfg.experiment.kind
        )));
    }
    Ok(())
}

fn prepare_out(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.resolved"), cfg.resolved()?)?;
    Ok(())
}

fn warn_all(warnings: &[String], err: &mut impl Write) {
    for w in warnings {
        let _ = writeln!(err, "warning: {w}");
    }
}

fn execute(command: Command, out: &mut impl Write, err: &mut impl Write) -> Result<i32> {
    match command {
        Command::RunRiskCurve(c) => {
            let cfg = load(&c)?;
            expect_kind(&cfg, ExperimentKind::RiskCurve, "run-risk-curve")?;
            prepare_out(&cfg, &c.out)?;
            let res = experiments::run_risk_curve(&cfg, &c.out)?;
            warn_all(&res.warnings, err);
            writeln!(out, "{}", res.summary())?;
            Ok(EXIT_OK)
        }
        Command::RunComplexity(c) => {
            let cfg = load(&c)?;
            expect_kind(&cfg, ExperimentKind::Complexity, "run-complexity")?;
            prepare_out(&cfg, &c.out)?;
            let res = experiments::run_complexity(&cfg, &c.out)?;
            warn_all(&res.warnings, err);
            writeln!(out, "{}", res.summary())?;
            Ok(EXIT_OK)
        }
        Command::VerifyDecomposition(c) => {
            let cfg = load(&c)?;
            expect_kind(&cfg, ExperimentKind::VerifyDecomposition, "verify-decomposition")?;
            prepare_out(&cfg, &c.out)?;
            let (rep, path) = experiments::verify_decomposition(&cfg, &c.out)?;
            write!(out, "{}", rep.to_key_value())?;
            writeln!(out, "report written to {}", path.display())?;
            for f in rep.failures() {
                writeln!(err, "tolerance failure: {f}")?;
            }
            Ok(if rep.passed() { EXIT_OK } else { EXIT_TOLERANCE })
        }
        Command::ComputeBounds(c) => {
            let cfg = load(&c)?;
            prepare_out(&cfg, &c.out)?;
            let reports = experiments::compute_bounds(&cfg)?;
            let mut csv = format!("{},data_fluctuation_bound,data_k_dagger\n", BoundReport::CSV_HEADER);
            for (rep, fb) in &reports {
                write!(out, "{}", rep.to_key_value())?;
                writeln!(out, "data_fluctuation_bound={}", fmt_f64(fb.value))?;
                writeln!(out, "data_k_dagger={}", fb.k_dagger)?;
                writeln!(out)?;
                csv.push_str(&format!("{},{},{}\n", rep.csv_row(), fmt_f64(fb.value), fb.k_dagger));
            }
            fs::write(c.out.join("bounds.csv"), csv)?;
            if cfg.experiment.kind == ExperimentKind::BoundsSweep {
                let (rows, path) = experiments::bounds_sweep(&cfg, &c.out)?;
                writeln!(out, "bounds_sweep: {} rows -> {}", rows.len(), path.display())?;
            }
            Ok(EXIT_OK)
        }
        Command::Selftest(_) => {
            let mut failed = false;
            for r in selftest::run_all() {
                let r = r?;
                failed |= !r.passed;
                writeln!(out, "{r}")?;
            }
            Ok(if failed { EXIT_TOLERANCE } else { EXIT_OK })
        }
    }
}

fn threads_of(command: &Command) -> usize {
    match command {
        Command::RunRiskCurve(c)
        | Command::RunComplexity(c)
        | Command::VerifyDecomposition(c)
        | Command::ComputeBounds(c)
        | Command::Selftest(c) => c.threads,
    }
}

/// Parse `args` (including the program name) and run.
pub fn run<I, T>(args: I, out: &mut impl Write, err: &mut impl Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "CONFIG: {e}");
                    EXIT_ERROR
                }
            };
        }
    };
    let threads = threads_of(&cli.command);
    if threads > 0 {
        // fails only if a pool already exists, which is fine
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match execute(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            EXIT_ERROR
        }
    }
}
