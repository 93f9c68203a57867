//! Command-line harness for the library: single solver traces, benchmark
//! sweeps averaged over seeded trials, and the named property check suites.
//! Outputs are byte-identical for identical configuration, seed, and
//! version; wall-clock columns are zeroed unless --timing asks for them.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::{Algorithm, ExperimentConfig, Partial, Problem, SweepAxis};
use graffopt::checks::{run_suite, CheckResult};
use graffopt::coords::{random_point, stiefel_to_projection, StiefelPoint};
use graffopt::geom_stiefel::distance;
use graffopt::optimize::{
    cg_stiefel, newton_projection, newton_stiefel, sd_projection, sd_stiefel, ObjectiveOracle,
    OptimizerReport, StopCriteria, Termination,
};
use graffopt::problems::{geodesic_midpoint, mean_random, quad_oracle, quad_random, quad_solution};
use graffopt::GraffError;

const CONFIG_FILE_HELP: &str = "\
CONFIG FILE:
  --config FILE reads `key = value` lines, one per line; `#` starts a
  comment. Keys mirror the long flags: problem, algo, n, k, m, trials,
  seed, grad-tol, step-tol, max-iter, out, timing, sweep, sweep-values.
  Precedence: flags > config file > built-in defaults (problem=quadratic,
  algo=sd, n=6, k=3, m=2, trials=10, seed=42).

OUTPUT:
  run    writes the iteration trace to --out (default run.csv) and a
         summary next to it with extension .summary.json; the summary is
         also printed to stdout.
  table  writes one row per sweep cell to --out (default table.csv) and
         the full table as JSON next to it with extension .json.
  check  prints a JSON report of the named property checks; --out saves
         a copy. Serialized layouts are pinned by the files in schemas/.

DETERMINISM:
  Outputs are byte-identical for identical configuration, seed, and
  version. Wall-clock columns are written as zero unless --timing is
  given; timings are informational and never asserted against.

ENVIRONMENT:
  GRAFFOPT_THREADS caps the number of parallel trials in `table`.

EXIT CODES:
  0 success, 1 solver or check failure, 2 usage error.";

#[derive(Parser)]
#[command(
    name = "graffopt",
    version,
    about = "Optimization on the affine Grassmannian: solver traces, benchmark tables, property checks",
    after_help = CONFIG_FILE_HELP
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one solver on one seeded instance and write its iteration trace
    Run(RunArgs),
    /// Sweep k or n, averaging accuracy over seeded trials per cell
    Table(TableArgs),
    /// Run named property check suites and report residuals as JSON
    Check(CheckArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Objective family: quadratic | mean
    #[arg(long)]
    problem: Option<String>,
    /// Solver: sd | cg | newton | sd-proj | newton-proj
    #[arg(long)]
    algo: Option<String>,
    /// Ambient dimension n of Graff(k, n)
    #[arg(long)]
    n: Option<usize>,
    /// Subspace dimension k of Graff(k, n)
    #[arg(long)]
    k: Option<usize>,
    /// Sample count for the mean objective
    #[arg(long)]
    m: Option<usize>,
    /// Trials per table cell
    #[arg(long)]
    trials: Option<usize>,
    /// Base seed; every random draw derives from it deterministically
    #[arg(long)]
    seed: Option<u64>,
    /// Stop when the Riemannian gradient norm falls below this
    #[arg(long = "grad-tol")]
    grad_tol: Option<f64>,
    /// Stop when the accepted step length falls below this
    #[arg(long = "step-tol")]
    step_tol: Option<f64>,
    /// Iteration budget
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
    /// Output CSV path; companion JSON lands next to it
    #[arg(long)]
    out: Option<PathBuf>,
    /// key = value config file; flags take precedence over it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Record real wall-clock times instead of zeros
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct TableArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Axis to sweep: k | n
    #[arg(long)]
    sweep: Option<String>,
    /// Comma-separated axis values, e.g. 1,2,3,4,5
    #[arg(long = "sweep-values")]
    sweep_values: Option<String>,
}

#[derive(Args)]
struct CheckArgs {
    /// Suite selector: all, numerics, coords, geometry, interchange,
    /// derivative, optimize, or problems
    selector: Option<String>,
    /// Also save the JSON report to this path
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failures are split by who must act: usage errors (exit 2) ask the caller
/// to fix the invocation, solver errors (exit 1) report a numerical outcome.
#[derive(Debug)]
enum AppError {
    Usage(String),
    Solver(String),
}

impl AppError {
    fn code(&self) -> u8 {
        match self {
            AppError::Usage(_) => 2,
            AppError::Solver(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            AppError::Usage(m) | AppError::Solver(m) => m,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // clap exits 0 for --help/--version and 2 for malformed invocations.
        Err(e) => e.exit(),
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.code())
        }
    }
}

fn execute(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Table(args) => cmd_table(args),
        Cmd::Check(args) => cmd_check(args),
    }
}

// ---------------------------------------------------------------------------
// configuration assembly

fn flags_to_partial(args: &CommonArgs) -> Result<Partial, AppError> {
    Ok(Partial {
        problem: args
            .problem
            .as_deref()
            .map(str::parse)
            .transpose()
            .map_err(AppError::Usage)?,
        algorithm: args
            .algo
            .as_deref()
            .map(str::parse)
            .transpose()
            .map_err(AppError::Usage)?,
        n: args.n,
        k: args.k,
        m: args.m,
        trials: args.trials,
        seed: args.seed,
        grad_tol: args.grad_tol,
        step_tol: args.step_tol,
        max_iter: args.max_iter,
        out: args.out.clone(),
        // An absent flag is no opinion, so a config-file `timing = true`
        // still wins; the flag can only switch timing on.
        timing: args.timing.then_some(true),
        sweep: None,
        sweep_values: None,
    })
}

fn resolve_config(
    common: &CommonArgs,
    sweep_flags: Option<(&Option<String>, &Option<String>)>,
    default_out: &str,
) -> Result<ExperimentConfig, AppError> {
    let mut flags = flags_to_partial(common)?;
    if let Some((sweep, sweep_values)) = sweep_flags {
        flags.sweep = sweep
            .as_deref()
            .map(str::parse)
            .transpose()
            .map_err(AppError::Usage)?;
        flags.sweep_values = sweep_values
            .as_deref()
            .map(config::parse_sweep_values)
            .transpose()
            .map_err(AppError::Usage)?;
    }
    let file = match common.config.as_deref() {
        Some(path) => Partial::from_file(path).map_err(AppError::Usage)?,
        None => Partial::default(),
    };
    let mut cfg = ExperimentConfig::resolve(flags.or(file), default_out);
    if sweep_flags.is_none() {
        // A shared config file may carry sweep keys for `table`; they mean
        // nothing to `run`, so drop them from the echoed configuration.
        cfg.sweep = None;
        cfg.sweep_values = None;
    }
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// deterministic seed substreams

/// splitmix64 finalizer; full-period and well dispersed, so derived seeds
/// from nearby user seeds do not collide in practice.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds the parts into one substream seed. Used to give every
/// (cell, trial, attempt) an independent stream of a common base seed.
fn mix(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x243F_6A88_85A3_08D3, |acc, &p| splitmix64(acc ^ p))
}

// ---------------------------------------------------------------------------
// problem assembly and solver dispatch

struct SingleSetup {
    oracle: ObjectiveOracle,
    start: StiefelPoint,
    /// Closed-form minimizer when one exists; populates dist_to_solution.
    reference: Option<StiefelPoint>,
}

/// Builds one seeded instance. Quadratic instances start from an
/// independent random point; mean instances start from their first sample.
fn build_problem(
    problem: Problem,
    n: usize,
    k: usize,
    m: usize,
    instance_seed: u64,
) -> graffopt::Result<SingleSetup> {
    match problem {
        Problem::Quadratic => {
            let inst = quad_random(n, k, instance_seed)?;
            let sol = quad_solution(&inst)?;
            let start = random_point(n, k, mix(&[instance_seed, 1]))?;
            Ok(SingleSetup {
                oracle: quad_oracle(&inst),
                start,
                reference: Some(sol.minimizer),
            })
        }
        Problem::Mean => {
            let inst = mean_random(n, k, m, instance_seed)?;
            let reference = if m == 2 {
                Some(geodesic_midpoint(&inst.points()[0], &inst.points()[1])?)
            } else {
                None
            };
            let start = inst.points()[0].clone();
            Ok(SingleSetup {
                oracle: inst.oracle(),
                start,
                reference,
            })
        }
    }
}

fn run_solver(
    algorithm: Algorithm,
    setup: &SingleSetup,
    stop: &StopCriteria,
) -> graffopt::Result<OptimizerReport> {
    let reference = setup.reference.as_ref();
    match algorithm {
        Algorithm::Sd => sd_stiefel(&setup.oracle, &setup.start, stop, reference),
        Algorithm::Cg => cg_stiefel(&setup.oracle, &setup.start, stop, reference),
        Algorithm::Newton => newton_stiefel(&setup.oracle, &setup.start, stop, reference),
        Algorithm::SdProj => sd_projection(
            &setup.oracle,
            &stiefel_to_projection(&setup.start),
            stop,
            reference,
        ),
        Algorithm::NewtonProj => newton_projection(
            &setup.oracle,
            &stiefel_to_projection(&setup.start),
            stop,
            reference,
        ),
    }
}

// ---------------------------------------------------------------------------
// serialization helpers

const TRACE_HEADER: &str = "iter,f,gradnorm,step_t,dist_moved,dist_to_solution,elapsed_s";
const TABLE_HEADER: &str = "axis_value,mean_accuracy,mean_elapsed_s,trials";

/// 17 significant digits round-trip every f64 exactly, so equal traces
/// are equal as bytes.
fn fmt_f(x: f64) -> String {
    format!("{x:.17e}")
}

fn trace_csv(records: &[graffopt::optimize::IterationRecord], timing: bool) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in records {
        let dist = r.dist_to_solution.map(fmt_f).unwrap_or_default();
        let elapsed = if timing { r.elapsed_s } else { 0.0 };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.iter,
            fmt_f(r.f),
            fmt_f(r.gradnorm),
            fmt_f(r.step_t),
            fmt_f(r.dist_moved),
            dist,
            fmt_f(elapsed),
        );
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<(), AppError> {
    fs::write(path, contents)
        .map_err(|e| AppError::Usage(format!("cannot write {}: {e}", path.display())))
}

fn to_pretty<T: Serialize>(value: &T) -> Result<String, AppError> {
    serde_json::to_string_pretty(value)
        .map_err(|e| AppError::Solver(format!("cannot serialize report: {e}")))
}

// ---------------------------------------------------------------------------
// run

#[derive(Serialize)]
struct RunSummary<'a> {
    version: &'static str,
    config: &'a ExperimentConfig,
    termination: Termination,
    iterations: usize,
    final_f: Option<f64>,
    final_gradnorm: Option<f64>,
    final_dist_to_solution: Option<f64>,
    corrections: usize,
    fallbacks: usize,
    failure: Option<String>,
    total_elapsed_s: f64,
}

impl<'a> RunSummary<'a> {
    fn from_report(cfg: &'a ExperimentConfig, report: &OptimizerReport) -> Self {
        let last = report.records.last();
        RunSummary {
            version: graffopt::VERSION,
            config: cfg,
            termination: report.termination,
            iterations: last.map_or(0, |r| r.iter),
            final_f: last.map(|r| r.f),
            final_gradnorm: last.map(|r| r.gradnorm),
            final_dist_to_solution: last.and_then(|r| r.dist_to_solution),
            corrections: report.corrections,
            fallbacks: report.fallbacks,
            failure: report.failure.clone(),
            total_elapsed_s: if cfg.timing {
                last.map_or(0.0, |r| r.elapsed_s)
            } else {
                0.0
            },
        }
    }

    /// Summary for a run that died before producing a report; the error
    /// still lands in the summary file so the failure is machine-readable.
    fn from_error(cfg: &'a ExperimentConfig, err: &GraffError) -> Self {
        RunSummary {
            version: graffopt::VERSION,
            config: cfg,
            termination: Termination::Failed,
            iterations: 0,
            final_f: None,
            final_gradnorm: None,
            final_dist_to_solution: None,
            corrections: 0,
            fallbacks: 0,
            failure: Some(err.to_string()),
            total_elapsed_s: 0.0,
        }
    }
}

fn summary_path(out: &Path) -> PathBuf {
    out.with_extension("summary.json")
}

fn cmd_run(args: RunArgs) -> Result<(), AppError> {
    let cfg = resolve_config(&args.common, None, "run.csv")?;
    cfg.validate(false).map_err(AppError::Usage)?;
    let stop = cfg.stop();

    let outcome = build_problem(cfg.problem, cfg.n, cfg.k, cfg.m, cfg.seed)
        .and_then(|setup| run_solver(cfg.algorithm, &setup, &stop));

    let (records, summary, failure) = match &outcome {
        Ok(report) => {
            let failure = match report.termination {
                Termination::Failed => Some(
                    report
                        .failure
                        .clone()
                        .unwrap_or_else(|| "solver reported failure".to_string()),
                ),
                _ => None,
            };
            (
                report.records.as_slice(),
                RunSummary::from_report(&cfg, report),
                failure,
            )
        }
        Err(GraffError::InvalidInput(m)) => return Err(AppError::Usage(m.clone())),
        Err(e) => (
            [].as_slice(),
            RunSummary::from_error(&cfg, e),
            Some(e.to_string()),
        ),
    };

    write_file(&cfg.out, &trace_csv(records, cfg.timing))?;
    let json = to_pretty(&summary)?;
    write_file(&summary_path(&cfg.out), &format!("{json}\n"))?;
    println!("{json}");

    match failure {
        None => Ok(()),
        Some(msg) => Err(AppError::Solver(msg)),
    }
}

// ---------------------------------------------------------------------------
// table

#[derive(Serialize)]
struct BenchTable<'a> {
    version: &'static str,
    config: &'a ExperimentConfig,
    axis: SweepAxis,
    cells: Vec<TableCell>,
}

#[derive(Serialize)]
struct TableCell {
    axis_value: usize,
    n: usize,
    k: usize,
    trials: usize,
    mean_accuracy: f64,
    mean_elapsed_s: f64,
    regenerations: usize,
}

struct TrialOutcome {
    accuracy: f64,
    elapsed_s: f64,
    regenerations: usize,
}

/// Instances whose closed-form reference does not exist are redrawn with a
/// fresh substream at most this many times per trial.
const MAX_REGEN: u64 = 16;

fn run_trial(
    cfg: &ExperimentConfig,
    n: usize,
    k: usize,
    axis_value: usize,
    trial: usize,
) -> Result<TrialOutcome, String> {
    let stop = cfg.stop();
    for attempt in 0..MAX_REGEN {
        let instance_seed = mix(&[cfg.seed, axis_value as u64, trial as u64, attempt]);
        let setup = match build_problem(cfg.problem, n, k, cfg.m, instance_seed) {
            Ok(setup) => setup,
            // No closed-form reference for this draw; redraw rather than
            // score the cell against nothing.
            Err(GraffError::OracleInfeasible(_)) | Err(GraffError::GeodesicSingular(_)) => {
                continue;
            }
            Err(e) => return Err(e.to_string()),
        };
        let report = run_solver(cfg.algorithm, &setup, &stop).map_err(|e| e.to_string())?;
        if report.termination == Termination::Failed {
            return Err(report
                .failure
                .unwrap_or_else(|| "solver reported failure".to_string()));
        }
        let reference = setup
            .reference
            .as_ref()
            .expect("table problems carry closed-form references");
        let accuracy = distance(&report.final_point, reference)
            .map_err(|e| e.to_string())?
            .0;
        let elapsed_s = report.records.last().map_or(0.0, |r| r.elapsed_s);
        return Ok(TrialOutcome {
            accuracy,
            elapsed_s,
            regenerations: attempt as usize,
        });
    }
    Err(format!(
        "gave up after {MAX_REGEN} regenerations: every draw lacked a closed-form reference"
    ))
}

/// Trial-count cap for the worker pool: GRAFFOPT_THREADS when set, the
/// machine's parallelism otherwise. The cap never affects output bytes,
/// only wall-clock time.
fn thread_cap(trials: usize) -> Result<usize, AppError> {
    match std::env::var("GRAFFOPT_THREADS") {
        Ok(raw) => match raw.trim().parse::<usize>() {
            Ok(v) if v >= 1 => Ok(v.min(trials)),
            _ => Err(AppError::Usage(format!(
                "GRAFFOPT_THREADS must be a positive integer, got '{raw}'"
            ))),
        },
        Err(std::env::VarError::NotPresent) => Ok(std::thread::available_parallelism()
            .map_or(1, usize::from)
            .min(trials)),
        Err(e) => Err(AppError::Usage(format!("GRAFFOPT_THREADS: {e}"))),
    }
}

/// Runs one cell's trials, possibly in parallel. Results are collected by
/// trial index and aggregated in that order, so the thread count cannot
/// change the output.
fn run_cell(
    cfg: &ExperimentConfig,
    n: usize,
    k: usize,
    axis_value: usize,
    threads: usize,
) -> Result<Vec<TrialOutcome>, AppError> {
    let trials = cfg.trials;
    let mut slots: Vec<Option<Result<TrialOutcome, String>>> = (0..trials).map(|_| None).collect();
    if threads <= 1 {
        for (i, slot) in slots.iter_mut().enumerate() {
            *slot = Some(run_trial(cfg, n, k, axis_value, i));
        }
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|worker| {
                    scope.spawn(move || -> Vec<(usize, Result<TrialOutcome, String>)> {
                        (worker..trials)
                            .step_by(threads)
                            .map(|i| (i, run_trial(cfg, n, k, axis_value, i)))
                            .collect()
                    })
                })
                .collect();
            for handle in handles {
                for (i, outcome) in handle.join().expect("trial worker panicked") {
                    slots[i] = Some(outcome);
                }
            }
        });
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(i, slot)| {
            slot.expect("every trial slot is filled")
                .map_err(|m| AppError::Solver(format!("cell {axis_value}, trial {i}: {m}")))
        })
        .collect()
}

fn cmd_table(args: TableArgs) -> Result<(), AppError> {
    let cfg = resolve_config(
        &args.common,
        Some((&args.sweep, &args.sweep_values)),
        "table.csv",
    )?;
    cfg.validate(true).map_err(AppError::Usage)?;
    let axis = cfg.sweep.expect("validated");
    let values = cfg.sweep_values.clone().expect("validated");
    let threads = thread_cap(cfg.trials)?;

    let mut cells = Vec::with_capacity(values.len());
    for &axis_value in &values {
        let (n, k) = match axis {
            SweepAxis::K => (cfg.n, axis_value),
            SweepAxis::N => (axis_value, cfg.k),
        };
        let outcomes = run_cell(&cfg, n, k, axis_value, threads)?;
        let count = outcomes.len() as f64;
        let mean_accuracy = outcomes.iter().map(|o| o.accuracy).sum::<f64>() / count;
        let mean_elapsed_s = if cfg.timing {
            outcomes.iter().map(|o| o.elapsed_s).sum::<f64>() / count
        } else {
            0.0
        };
        let regenerations = outcomes.iter().map(|o| o.regenerations).sum();
        if !(mean_accuracy.is_finite() && mean_accuracy >= 0.0) {
            return Err(AppError::Solver(format!(
                "cell {axis} = {axis_value}: mean accuracy {mean_accuracy} is not a \
                 nonnegative finite number"
            )));
        }
        cells.push(TableCell {
            axis_value,
            n,
            k,
            trials: cfg.trials,
            mean_accuracy,
            mean_elapsed_s,
            regenerations,
        });
    }

    let mut csv = String::new();
    csv.push_str(TABLE_HEADER);
    csv.push('\n');
    for cell in &cells {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            cell.axis_value,
            fmt_f(cell.mean_accuracy),
            fmt_f(cell.mean_elapsed_s),
            cell.trials,
        );
    }
    write_file(&cfg.out, &csv)?;

    let table = BenchTable {
        version: graffopt::VERSION,
        config: &cfg,
        axis,
        cells,
    };
    let json = to_pretty(&table)?;
    write_file(&cfg.out.with_extension("json"), &format!("{json}\n"))?;
    println!("{json}");
    Ok(())
}

// ---------------------------------------------------------------------------
// check

#[derive(Serialize)]
struct CheckReport {
    version: &'static str,
    selector: String,
    all_pass: bool,
    results: Vec<CheckResult>,
}

fn cmd_check(args: CheckArgs) -> Result<(), AppError> {
    let selector = args.selector.as_deref().unwrap_or("all");
    let results = match run_suite(selector) {
        Ok(results) => results,
        Err(GraffError::InvalidInput(m)) => return Err(AppError::Usage(m)),
        Err(e) => return Err(AppError::Solver(e.to_string())),
    };
    let failed = results.iter().filter(|r| !r.pass).count();
    let report = CheckReport {
        version: graffopt::VERSION,
        selector: selector.to_string(),
        all_pass: failed == 0,
        results,
    };
    let json = to_pretty(&report)?;
    if let Some(out) = args.out.as_deref() {
        write_file(out, &format!("{json}\n"))?;
    }
    println!("{json}");
    if failed == 0 {
        Ok(())
    } else {
        Err(AppError::Solver(format!(
            "{failed} of {} checks failed",
            report.results.len()
        )))
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use graffopt::optimize::IterationRecord;

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(AppError::Usage("x".into()).code(), 2);
        assert_eq!(AppError::Solver("x".into()).code(), 1);
    }

    #[test]
    fn mixed_seeds_disperse() {
        let a = mix(&[42, 3, 0, 0]);
        let b = mix(&[42, 3, 1, 0]);
        let c = mix(&[42, 4, 0, 0]);
        let d = mix(&[43, 3, 0, 0]);
        assert!(a != b && a != c && a != d && b != c);
        assert_eq!(a, mix(&[42, 3, 0, 0]));
    }

    #[test]
    fn float_cells_roundtrip_exactly() {
        for x in [0.0, 1.0, -3.5e-17, std::f64::consts::PI, 6.02e23] {
            assert_eq!(fmt_f(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn trace_rows_zero_the_clock_unless_asked() {
        let records = vec![IterationRecord {
            iter: 0,
            f: 1.5,
            gradnorm: 0.25,
            step_t: 0.0,
            dist_moved: 0.0,
            dist_to_solution: None,
            elapsed_s: 0.125,
        }];
        let plain = trace_csv(&records, false);
        let timed = trace_csv(&records, true);
        let mut lines = plain.lines();
        assert_eq!(lines.next(), Some(TRACE_HEADER));
        let row = lines.next().unwrap();
        assert!(row.starts_with("0,1.5"));
        // dist_to_solution is empty, elapsed_s is zeroed.
        assert!(row.contains(",,"));
        assert!(row.ends_with(&fmt_f(0.0)));
        assert!(timed.lines().nth(1).unwrap().ends_with(&fmt_f(0.125)));
    }

    #[test]
    fn failure_summaries_carry_the_message() {
        let cfg = ExperimentConfig::resolve(Partial::default(), "run.csv");
        let summary =
            RunSummary::from_error(&cfg, &GraffError::OracleInfeasible("gap too small".into()));
        assert_eq!(summary.termination, Termination::Failed);
        assert!(summary
            .failure
            .as_deref()
            .unwrap()
            .contains("gap too small"));
        assert!(summary.final_f.is_none());
        let json = to_pretty(&summary).unwrap();
        assert!(json.contains("\"termination\": \"Failed\""));
    }
}
