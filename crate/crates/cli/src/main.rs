use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sine_core::config::RunConfig;
use sine_core::experiment;

/// Like `println!`, but a closed stdout (e.g. piped into `head`) is not an
/// error.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

/// Regularized least-squares solves by SINE and CGNE with the discrepancy
/// principle.
///
/// Exit status: 0 when every run stopped by the discrepancy principle or
/// breakdown and every check held, 1 when a run hit the iteration cap or a
/// check failed, 2 on configuration or I/O errors.
#[derive(Parser)]
#[command(name = "sine", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one solver; writes report.json and residuals.csv.
    Solve(Common),
    /// Run SINE and CGNE side by side; writes compare.json and compare.csv.
    Compare(Common),
    /// Error against noise level on the multiplication problem; writes
    /// ratecheck.csv and ratecheck.json.
    Ratecheck(Common),
    /// Ritz values, interlacing and orthogonality of a SINE run; writes
    /// diagnostics.json and report.json. Needs --history.
    Diagnose(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config; defaults reproduce the multiplication-operator example.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the problem seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Retain per-step vectors in the report.
    #[arg(long)]
    history: bool,
}

impl Common {
    fn load(&self) -> sine_core::Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config = config.with_seed(seed);
        }
        config.history |= self.history;
        Ok(config)
    }
}

fn run(command: Command) -> sine_core::Result<bool> {
    match command {
        Command::Solve(c) => {
            let report = experiment::cmd_solve(&c.load()?, &c.out)?;
            say!(
                "{}: m = {} ({:?}), residual {:e}",
                report.solver,
                report.stopping_index,
                report.terminated_by,
                report.final_residual()
            );
            wrote(&c.out, &[experiment::REPORT_FILE, experiment::RESIDUALS_FILE]);
            Ok(experiment::run_succeeded(&report))
        }
        Command::Compare(c) => {
            let result = experiment::cmd_compare(&c.load()?, &c.out)?;
            say!(
                "sine m = {} ({:?}), cgne m = {} ({:?}), dominance {}",
                result.sine_stopping_index,
                result.sine_terminated_by,
                result.cgne_stopping_index,
                result.cgne_terminated_by,
                if result.all_dominate { "holds" } else { "violated" }
            );
            wrote(&c.out, &[experiment::COMPARE_JSON_FILE, experiment::COMPARE_CSV_FILE]);
            Ok(result.succeeded())
        }
        Command::Ratecheck(c) => {
            let config = c.load()?.ratecheck()?;
            let result = experiment::cmd_ratecheck(&config, &c.out)?;
            for r in &result.records {
                let flag = if r.flagged { "  capped" } else { "" };
                say!("delta {:e}: m = {}, error {:e}{flag}", r.delta, r.m, r.error);
            }
            match result.slope {
                Some(s) => say!("slope {s:.4} (theory {:.4})", result.theory_exponent),
                None => say!("slope absent (fewer than two usable records)"),
            }
            wrote(&c.out, &[experiment::RATECHECK_CSV_FILE, experiment::RATECHECK_JSON_FILE]);
            Ok(result.succeeded())
        }
        Command::Diagnose(c) => {
            let d = experiment::cmd_diagnose(&c.load()?, &c.out)?;
            say!(
                "m = {}, interlacing {}, max orthogonality violation {:e}",
                d.stopping_index,
                d.all_interlacing,
                d.orthogonality.max_violation()
            );
            wrote(&c.out, &[experiment::DIAGNOSTICS_FILE, experiment::REPORT_FILE]);
            Ok(true)
        }
    }
}

fn wrote(out: &Path, files: &[&str]) {
    for f in files {
        say!("wrote {}", out.join(f).display());
    }
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
