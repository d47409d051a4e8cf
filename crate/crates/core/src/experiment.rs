//! Drivers behind the `solve`, `compare`, `ratecheck` and `diagnose`
//! subcommands. Each `cmd_*` runs, writes its files into `out` and returns
//! the in-memory result; whether the process should exit 0 is answered by
//! the result's `succeeded`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cgne::CgneSolver;
use crate::config::{RateCheckConfig, RunConfig};
use crate::diagnostics::{analyze, DiagnosticsReport};
use crate::error::{Error, Result};
use crate::problem::{multiplication_problem_with_noise, Problem};
use crate::run::{RunReport, SolverKind, StoppingRule, Termination};
use crate::sine::{SineOptions, SineSolver};

/// Relative slack (times `||r_0||`) of the per-step dominance flag.
pub const DOMINANCE_SLACK: f64 = 1e-10;
/// Largest fraction of capped rate-check runs that still exits 0.
pub const MAX_FLAGGED_FRACTION: f64 = 0.2;

pub const REPORT_FILE: &str = "report.json";
pub const RESIDUALS_FILE: &str = "residuals.csv";
pub const COMPARE_JSON_FILE: &str = "compare.json";
pub const COMPARE_CSV_FILE: &str = "compare.csv";
pub const RATECHECK_JSON_FILE: &str = "ratecheck.json";
pub const RATECHECK_CSV_FILE: &str = "ratecheck.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";

fn sine_solver<'a>(
    problem: &'a Problem,
    gamma: f64,
    x0: Option<&nalgebra::DVector<f64>>,
    history: bool,
) -> Result<SineSolver<'a>> {
    let mut options = SineOptions::new(gamma).with_history(history);
    if let Some(x0) = x0 {
        options = options.with_x0(x0.clone());
    }
    SineSolver::new(problem, options)
}

fn cgne_solver<'a>(
    problem: &'a Problem,
    x0: Option<&nalgebra::DVector<f64>>,
    history: bool,
) -> Result<CgneSolver<'a>> {
    let mut solver = CgneSolver::new(problem)?.with_history(history);
    if let Some(x0) = x0 {
        solver = solver.with_x0(x0.clone());
    }
    Ok(solver)
}

/// Runs the configured solver with the discrepancy principle.
pub fn solve(config: &RunConfig, problem: &Problem) -> Result<RunReport> {
    let rule = config.rule(problem)?;
    let x0 = config.initial_guess(problem)?;
    match config.solver {
        SolverKind::Sine => {
            sine_solver(problem, config.gamma, x0.as_ref(), config.history)?.run(&rule)
        }
        SolverKind::Cgne => cgne_solver(problem, x0.as_ref(), config.history)?.run(&rule),
    }
}

/// Exit-code rule for single runs: anything but the iteration cap.
pub fn run_succeeded(report: &RunReport) -> bool {
    report.terminated_by != Termination::IterationCap
}

#[derive(Serialize)]
struct ResidualRow {
    m: usize,
    residual: f64,
    error: Option<f64>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        writer.serialize(row).map_err(csv_err)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn ensure_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

pub fn write_residuals(path: &Path, report: &RunReport) -> Result<()> {
    let rows: Vec<ResidualRow> = report
        .residual_history
        .iter()
        .enumerate()
        .map(|(m, &residual)| ResidualRow {
            m,
            residual,
            error: report.error_history.as_ref().and_then(|e| e.get(m).copied()),
        })
        .collect();
    write_rows(path, &rows)
}

/// `solve`: writes `report.json` and `residuals.csv`.
pub fn cmd_solve(config: &RunConfig, out: &Path) -> Result<RunReport> {
    let problem = config.build_problem()?;
    let report = solve(config, &problem)?;
    ensure_dir(out)?;
    write_json(&out.join(REPORT_FILE), &report)?;
    write_residuals(&out.join(RESIDUALS_FILE), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub m: usize,
    pub sine_residual: f64,
    pub cgne_residual: f64,
    /// `||r_m^SINE|| <= ||r_m^CGNE|| + slack * ||r_0||`.
    pub dominates: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareResult {
    pub gamma: f64,
    pub tau: f64,
    pub delta: f64,
    /// `m^gamma`: first discrepancy index of SINE.
    pub sine_stopping_index: usize,
    /// `m^inf`: first discrepancy index of CGNE.
    pub cgne_stopping_index: usize,
    pub sine_terminated_by: Termination,
    pub cgne_terminated_by: Termination,
    /// Steps `0..=max(m^gamma, m^inf)`. After a breakdown the last
    /// residual is repeated.
    pub rows: Vec<CompareRow>,
    pub sine_solution: Vec<f64>,
    pub cgne_solution: Vec<f64>,
    pub dominance_tolerance: f64,
    pub all_dominate: bool,
    /// `m^gamma <= m^inf`.
    pub ordering_holds: bool,
}

impl CompareResult {
    pub fn succeeded(&self) -> bool {
        self.sine_terminated_by != Termination::IterationCap
            && self.cgne_terminated_by != Termination::IterationCap
            && self.all_dominate
            && self.ordering_holds
    }
}

fn padded(history: &[f64], len: usize) -> Vec<f64> {
    let last = *history.last().expect("residual history starts at m = 0");
    let mut v = history.to_vec();
    v.resize(len, last);
    v
}

/// Both solvers with the discrepancy principle, then both again for
/// `max(m^gamma, m^inf)` steps to fill the per-step table.
pub fn compare(config: &RunConfig, problem: &Problem) -> Result<CompareResult> {
    let rule = config.rule(problem)?;
    let x0 = config.initial_guess(problem)?;
    let sine = sine_solver(problem, config.gamma, x0.as_ref(), false)?;
    let cgne = cgne_solver(problem, x0.as_ref(), false)?;
    let sine_stop = sine.run(&rule)?;
    let cgne_stop = cgne.run(&rule)?;

    let steps = sine_stop.stopping_index.max(cgne_stop.stopping_index);
    let sine_table = sine.run_steps(steps, rule.tau)?;
    let cgne_table = cgne.run_steps(steps, rule.tau)?;
    let sine_res = padded(&sine_table.residual_history, steps + 1);
    let cgne_res = padded(&cgne_table.residual_history, steps + 1);

    let tolerance = DOMINANCE_SLACK * sine_res[0];
    let rows: Vec<CompareRow> = (0..=steps)
        .map(|m| CompareRow {
            m,
            sine_residual: sine_res[m],
            cgne_residual: cgne_res[m],
            dominates: sine_res[m] <= cgne_res[m] + tolerance,
        })
        .collect();

    Ok(CompareResult {
        gamma: config.gamma,
        tau: rule.tau,
        delta: rule.delta,
        sine_stopping_index: sine_stop.stopping_index,
        cgne_stopping_index: cgne_stop.stopping_index,
        sine_terminated_by: sine_stop.terminated_by,
        cgne_terminated_by: cgne_stop.terminated_by,
        all_dominate: rows.iter().all(|r| r.dominates),
        ordering_holds: sine_stop.stopping_index <= cgne_stop.stopping_index,
        rows,
        sine_solution: sine_stop.solution,
        cgne_solution: cgne_stop.solution,
        dominance_tolerance: tolerance,
    })
}

/// `compare`: writes `compare.json` and `compare.csv`.
pub fn cmd_compare(config: &RunConfig, out: &Path) -> Result<CompareResult> {
    let problem = config.build_problem()?;
    let result = compare(config, &problem)?;
    ensure_dir(out)?;
    write_json(&out.join(COMPARE_JSON_FILE), &result)?;
    write_rows(&out.join(COMPARE_CSV_FILE), &result.rows)?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRecord {
    pub delta: f64,
    pub m: usize,
    /// `||x_m - x^+||` in the weighted norm.
    pub error: f64,
    /// The run hit the iteration cap; excluded from the fit.
    pub flagged: bool,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCheckResult {
    pub config: RateCheckConfig,
    /// Ordered by decreasing `delta`.
    pub records: Vec<RateRecord>,
    /// Least-squares slope of `log error` against `log delta`; absent with
    /// fewer than two usable records.
    pub slope: Option<f64>,
    pub theory_exponent: f64,
    /// Adjacent pairs where the error grows although `delta` shrinks.
    pub inversions: usize,
    pub flagged_fraction: f64,
}

impl RateCheckResult {
    pub fn succeeded(&self) -> bool {
        self.flagged_fraction <= MAX_FLAGGED_FRACTION
    }
}

/// Least-squares slope of `log(error)` against `log(delta)` over unflagged
/// records with positive error.
pub fn fit_rate(records: &[RateRecord]) -> Option<f64> {
    let points: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| !r.flagged && r.error > 0.0 && r.error.is_finite() && r.delta > 0.0)
        .map(|r| (r.delta.ln(), r.error.ln()))
        .collect();
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

fn rate_record(config: &RateCheckConfig, delta: f64) -> Result<RateRecord> {
    let problem =
        multiplication_problem_with_noise(config.n, config.exponent(), delta, config.noise, config.seed)?;
    let mut rule = StoppingRule::for_problem(config.tau, &problem)?;
    if let Some(k) = config.max_iters {
        rule = rule.with_max_iters(k);
    }
    let report = SineSolver::new(&problem, SineOptions::new(config.gamma))?.run(&rule)?;
    let error = problem
        .error_of(&report.solution_vector())
        .expect("multiplication problems carry their truth");
    Ok(RateRecord {
        delta,
        m: report.stopping_index,
        error,
        flagged: report.terminated_by == Termination::IterationCap,
        elapsed_seconds: report.elapsed_seconds,
    })
}

/// SINE on the multiplication problem for every `delta` of the grid, in
/// parallel.
pub fn ratecheck(config: &RateCheckConfig) -> Result<RateCheckResult> {
    config.validate()?;
    let records = config
        .delta_grid
        .par_iter()
        .map(|&delta| rate_record(config, delta))
        .collect::<Result<Vec<_>>>()?;
    let flagged = records.iter().filter(|r| r.flagged).count();
    Ok(RateCheckResult {
        config: config.clone(),
        slope: fit_rate(&records),
        theory_exponent: config.theory_exponent(),
        inversions: records.windows(2).filter(|w| w[1].error > w[0].error).count(),
        flagged_fraction: flagged as f64 / records.len() as f64,
        records,
    })
}

/// `ratecheck`: writes `ratecheck.csv` (delta, m, error, flagged) and
/// `ratecheck.json`.
pub fn cmd_ratecheck(config: &RateCheckConfig, out: &Path) -> Result<RateCheckResult> {
    let result = ratecheck(config)?;
    ensure_dir(out)?;
    write_json(&out.join(RATECHECK_JSON_FILE), &result)?;
    write_rows(&out.join(RATECHECK_CSV_FILE), &result.records)?;
    Ok(result)
}

/// `diagnose`: SINE run whose retained history is analyzed. Writes
/// `diagnostics.json` and `report.json`.
pub fn cmd_diagnose(config: &RunConfig, out: &Path) -> Result<DiagnosticsReport> {
    if config.solver != SolverKind::Sine {
        return Err(Error::Config("diagnose needs solver = \"sine\"".into()));
    }
    let problem = config.build_problem()?;
    let report = solve(config, &problem)?;
    let diagnostics = analyze(&report, problem.operator())?;
    ensure_dir(out)?;
    write_json(&out.join(DIAGNOSTICS_FILE), &diagnostics)?;
    write_json(&out.join(REPORT_FILE), &report)?;
    Ok(diagnostics)
}
