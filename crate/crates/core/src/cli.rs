//! Command implementations behind the `bcdcert` binary.
//!
//! Exit codes: `0` success (and, for `run`, a fully passing certificate),
//! `1` operational error, `2` certificate or verification failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::Error as CoreError;
use crate::numerics::{fd_check_gradients, probe_lipschitz_x, Coordinate, Region, DEFAULT_FD_STEP};
use crate::problem::{BlockPoint, DeclaredLipschitz, Objective};
use crate::problems::{make_problem, Problem, ProblemSpec};
use crate::solver::{solve, solve_gd_baseline, RunFailure, RunResult, SolverConfig};
use crate::strategies::{BacktrackParams, XStrategy};
use crate::trace::{
    render_trace_csv, summary_path, summary_path_for_trace, trace_path, trace_rows, verify_trace,
    write_atomic, Summary, TraceError,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_VIOLATION: u8 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
    #[default]
    Both,
}

impl OutputFormat {
    fn csv(self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }
    fn json(self) -> bool {
        matches!(self, OutputFormat::Json | OutputFormat::Both)
    }
}

/// The `[solver]` section: [`SolverConfig`] flattened, plus an optional
/// user-declared Lipschitz constant and a baseline step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub x_strategy: Option<XStrategy>,
    pub y_tol: Option<f64>,
    pub grad_tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub check_tol: Option<f64>,
    pub seed: Option<u64>,
    pub l_init: Option<f64>,
    pub growth: Option<f64>,
    pub max_rejects: Option<usize>,
    /// Replaces the problem's x-block Lipschitz oracle.
    pub lipschitz: Option<f64>,
    /// Also run joint gradient descent with this step.
    pub gd_step: Option<f64>,
}

impl SolverSection {
    pub fn to_config(&self) -> SolverConfig {
        let d = SolverConfig::default();
        let b = BacktrackParams::default();
        SolverConfig {
            x_strategy: self.x_strategy.unwrap_or(d.x_strategy),
            y_tol: self.y_tol.unwrap_or(d.y_tol),
            grad_tol: self.grad_tol.unwrap_or(d.grad_tol),
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            backtrack: BacktrackParams {
                l_init: self.l_init.unwrap_or(b.l_init),
                growth: self.growth.unwrap_or(b.growth),
                max_rejects: self.max_rejects.unwrap_or(b.max_rejects),
            },
            check_tol: self.check_tol.unwrap_or(d.check_tol),
            seed: self.seed.unwrap_or(d.seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartSection {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    output: Option<String>,
    format: Option<OutputFormat>,
    seeds: Option<Vec<u64>>,
    problem: toml::Table,
    #[serde(default)]
    solver: SolverSection,
    start: Option<StartSection>,
}

/// A parsed run configuration file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfigFile {
    pub problem: ProblemSpec,
    pub solver: SolverSection,
    pub start: Option<StartSection>,
    pub output: String,
    pub format: OutputFormat,
    /// Independent runs, one per seed, executed in parallel.
    pub seeds: Option<Vec<u64>>,
}

impl RunConfigFile {
    /// Strict parse: unknown keys, unknown families and type errors fail
    /// with the offending key and line.
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let config_err = |message: String| CliError::Config {
            path: origin.to_string(),
            message,
        };
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| config_err(e.to_string().trim_end().to_string()))?;
        let problem = ProblemSpec::from_table(&raw.problem).map_err(config_err)?;
        Ok(Self {
            problem,
            solver: raw.solver,
            start: raw.start,
            output: raw.output.unwrap_or_else(|| "bcdcert_run".to_string()),
            format: raw.format.unwrap_or_default(),
            seeds: raw.seeds,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Applies a seed to both the problem instance and the start point.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.problem = self.problem.with_seed(seed);
        self.solver.seed = Some(seed);
        self
    }
}

/// Shortest round-trip form, switching to scientific notation for very
/// small or large magnitudes. Log output only; traces use plain `Display`.
fn num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e6).contains(&a) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

/// Exit code for a finished or failed run.
pub fn run_exit_code(outcome: &Result<RunResult, RunFailure>) -> u8 {
    match outcome {
        Ok(r) if r.certified() => EXIT_OK,
        Ok(_) => EXIT_VIOLATION,
        Err(f) if matches!(f.error, CoreError::SufficientDecreaseViolated { .. }) => EXIT_VIOLATION,
        Err(_) => EXIT_ERROR,
    }
}

fn write_outputs(
    prefix: &str,
    format: OutputFormat,
    problem: &str,
    outcome: &Result<RunResult, RunFailure>,
) -> Result<Option<Summary>, CliError> {
    let (result, error) = match outcome {
        Ok(r) => (r, None),
        Err(f) => match &f.partial {
            Some(p) => (p.as_ref(), Some(&f.error)),
            None => return Ok(None),
        },
    };
    let csv = render_trace_csv(&trace_rows(result));
    let summary = Summary::from_run(problem, result, error, &csv);
    let io = |p: &Path, e: std::io::Error| CliError::Io(format!("{}: {e}", p.display()));
    if format.csv() {
        let p = trace_path(prefix);
        write_atomic(&p, csv.as_bytes()).map_err(|e| io(&p, e))?;
    }
    if format.json() {
        let p = summary_path(prefix);
        let json = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
        write_atomic(&p, json.as_bytes()).map_err(|e| io(&p, e))?;
    }
    Ok(Some(summary))
}

fn start_point(cfg: &RunConfigFile, problem: &Problem, seed: u64) -> Result<BlockPoint, CliError> {
    match &cfg.start {
        Some(s) => Ok(BlockPoint::from_slices(&s.x, &s.y)?),
        None => Ok(problem.random_start(seed)),
    }
}

/// Runs one configured experiment, writing its outputs under `prefix`.
pub fn execute_single(
    cfg: &RunConfigFile,
    prefix: &str,
    quiet: bool,
    log: &mut dyn Write,
) -> Result<u8, CliError> {
    let problem = make_problem(&cfg.problem)?;
    let solver_cfg = cfg.solver.to_config();
    let start = start_point(cfg, &problem, solver_cfg.seed)?;

    let outcome = match cfg.solver.lipschitz {
        Some(l) => {
            let declared = DeclaredLipschitz {
                inner: &problem,
                lipschitz: l,
            };
            solve(&declared, &start, &solver_cfg)
        }
        None => solve(&problem, &start, &solver_cfg),
    };
    let code = run_exit_code(&outcome);
    let summary = write_outputs(prefix, cfg.format, problem.name(), &outcome)?;

    let mut lines = Vec::new();
    if let (Ok(r), Some(s)) = (&outcome, &summary) {
        lines.push(format!(
            "{prefix}: {} {} T={} f0={} f_T={} stop={} certificate={}",
            problem.name(),
            r.method,
            s.iterations,
            num(s.f0),
            num(s.f_final),
            s.stop_reason,
            if s.certificate_passed {
                "passed"
            } else {
                "FAILED"
            },
        ));
    }
    if let Err(f) = &outcome {
        // Errors reach the log even in quiet mode.
        let _ = writeln!(log, "{prefix}: error [{}]: {f}", f.error.kind());
    }

    if let Some(step) = cfg.solver.gd_step {
        let gd = solve_gd_baseline(&problem, &start, step, solver_cfg.max_iters);
        let gd_prefix = format!("{prefix}.gd");
        write_outputs(&gd_prefix, cfg.format, problem.name(), &gd)?;
        lines.push(match &gd {
            Ok(r) => format!(
                "{gd_prefix}: baseline T={} f_T={}",
                r.iterations(),
                num(r.certificate.f_final)
            ),
            Err(f) => format!("{gd_prefix}: baseline stopped: {f}"),
        });
    }
    if !quiet {
        for line in lines {
            let _ = writeln!(log, "{line}");
        }
    }
    Ok(code)
}

/// `run`: one experiment, or one per configured seed in parallel.
pub fn cmd_run(cfg: &RunConfigFile, quiet: bool, log: &mut dyn Write) -> u8 {
    let Some(seeds) = cfg.seeds.clone() else {
        return execute_single(cfg, &cfg.output, quiet, log).unwrap_or_else(|e| {
            let _ = writeln!(log, "error: {e}");
            EXIT_ERROR
        });
    };
    let results: Vec<(u64, Result<u8, CliError>, Vec<u8>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let run_cfg = cfg.clone().with_seed(seed);
                scope.spawn(move || {
                    let mut buf = Vec::new();
                    let prefix = format!("{}.seed{seed}", run_cfg.output);
                    let code = execute_single(&run_cfg, &prefix, quiet, &mut buf);
                    (seed, code, buf)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("run thread panicked"))
            .collect()
    });
    let mut worst = EXIT_OK;
    for (seed, code, buf) in results {
        let _ = log.write_all(&buf);
        let code = code.unwrap_or_else(|e| {
            let _ = writeln!(log, "seed {seed}: error: {e}");
            EXIT_ERROR
        });
        worst = worst.max(code);
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckItem {
    pub check: String,
    pub point: Option<usize>,
    pub status: CheckStatus,
    pub value: Option<f64>,
    pub limit: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub problem: String,
    pub points: usize,
    pub seed: u64,
    pub max_rel_err: f64,
    pub worst_coordinate: Option<Coordinate>,
    pub items: Vec<CheckItem>,
    pub passed: bool,
}

pub const FD_REL_TOL: f64 = 1e-6;
pub const MINIMIZER_TOL: f64 = 1e-10;
pub const LIPSCHITZ_SLACK: f64 = 1e-6;
pub const PROBE_PAIRS: usize = 100;

/// Runs the oracle audits on `obj` at the given points.
pub fn check_objective<O: Objective + ?Sized>(
    obj: &O,
    points: &[BlockPoint],
    seed: u64,
) -> Result<CheckReport, CoreError> {
    let (_, n_y) = obj.dims();
    let mut items = Vec::new();
    let mut max_rel_err = 0.0_f64;
    let mut worst_coordinate = None;
    let status = |ok: bool| {
        if ok {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        }
    };

    for (k, p) in points.iter().enumerate() {
        let fd = fd_check_gradients(obj, p, DEFAULT_FD_STEP)?;
        if fd.worst_index.is_some() && (worst_coordinate.is_none() || fd.max_rel_err > max_rel_err)
        {
            max_rel_err = fd.max_rel_err;
            worst_coordinate = fd.worst_index;
        }
        items.push(CheckItem {
            check: "gradient_fd".into(),
            point: Some(k),
            status: status(fd.passes(FD_REL_TOL)),
            value: Some(fd.max_rel_err),
            limit: Some(FD_REL_TOL),
            detail: match fd.worst_index {
                Some(c) => format!("worst coordinate {c}"),
                None => "no coordinates".into(),
            },
        });
        if n_y == 0 {
            items.push(CheckItem {
                check: "gradient_fd_y".into(),
                point: Some(k),
                status: CheckStatus::Skipped,
                value: None,
                limit: None,
                detail: "skipped (empty block)".into(),
            });
        }

        if n_y == 0 {
            items.push(skipped("exact_min_y", k, "skipped (empty block)"));
        } else if obj.has_exact_min_y() {
            items.push(match obj.exact_min_y(p.x()) {
                Ok(y) => {
                    let scale = obj.grad_y(p).norm().max(1.0);
                    let r = obj.grad_y(&p.with_y(y)?).norm();
                    CheckItem {
                        check: "exact_min_y".into(),
                        point: Some(k),
                        status: status(r <= MINIMIZER_TOL * scale),
                        value: Some(r),
                        limit: Some(MINIMIZER_TOL * scale),
                        detail: "‖∇_y f(x, y*)‖".into(),
                    }
                }
                Err(e) => skipped("exact_min_y", k, &format!("skipped ({e})")),
            });
        } else {
            items.push(skipped("exact_min_y", k, "skipped (no oracle)"));
        }

        if obj.has_exact_min_x() {
            items.push(match obj.exact_min_x(p.y()) {
                Ok(x) => {
                    let scale = obj.grad_x(p).norm().max(1.0);
                    let r = obj.grad_x(&p.with_x(x)?).norm();
                    CheckItem {
                        check: "exact_min_x".into(),
                        point: Some(k),
                        status: status(r <= MINIMIZER_TOL * scale),
                        value: Some(r),
                        limit: Some(MINIMIZER_TOL * scale),
                        detail: "‖∇_x f(x*, y)‖".into(),
                    }
                }
                Err(e) => skipped("exact_min_x", k, &format!("skipped ({e})")),
            });
        } else {
            items.push(skipped("exact_min_x", k, "skipped (no oracle)"));
        }

        match obj.lipschitz_x(p.y()) {
            Some(l) => {
                let region = Region::around(p.x(), 1.0);
                let probe = probe_lipschitz_x(
                    obj,
                    p.y(),
                    &region,
                    PROBE_PAIRS,
                    seed.wrapping_add(k as u64),
                )?;
                let limit = l * (1.0 + LIPSCHITZ_SLACK);
                items.push(CheckItem {
                    check: "lipschitz_x".into(),
                    point: Some(k),
                    status: status(probe <= limit),
                    value: Some(probe),
                    limit: Some(limit),
                    detail: format!("declared L = {l}"),
                });
            }
            None => items.push(skipped("lipschitz_x", k, "skipped (no oracle)")),
        }
    }
    let passed = items.iter().all(|i| i.status != CheckStatus::Fail);
    Ok(CheckReport {
        problem: obj.name().to_string(),
        points: points.len(),
        seed,
        max_rel_err,
        worst_coordinate,
        items,
        passed,
    })
}

fn skipped(check: &str, k: usize, detail: &str) -> CheckItem {
    CheckItem {
        check: check.into(),
        point: Some(k),
        status: CheckStatus::Skipped,
        value: None,
        limit: None,
        detail: detail.into(),
    }
}

/// Prints the check table and JSON; returns the exit code.
pub fn print_check(report: &CheckReport, out: &mut dyn Write) -> u8 {
    let _ = writeln!(
        out,
        "{:<14} {:>5} {:>8} {:>13} {:>13}  detail",
        "check", "point", "status", "value", "limit"
    );
    for i in &report.items {
        let num = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.3e}"));
        let _ = writeln!(
            out,
            "{:<14} {:>5} {:>8} {:>13} {:>13}  {}",
            i.check,
            i.point.map_or_else(|| "-".into(), |p| p.to_string()),
            format!("{:?}", i.status).to_lowercase(),
            num(i.value),
            num(i.limit),
            i.detail
        );
    }
    let worst = report
        .worst_coordinate
        .map_or_else(|| "none".to_string(), |c| c.to_string());
    let _ = writeln!(
        out,
        "{}: max_rel_err {:.3e} at {worst}; {}",
        report.problem,
        report.max_rel_err,
        if report.passed {
            "all checks passed"
        } else {
            "CHECKS FAILED"
        }
    );
    let _ = writeln!(
        out,
        "{}",
        serde_json::to_string(report).expect("report serializes")
    );
    if report.passed {
        EXIT_OK
    } else {
        EXIT_VIOLATION
    }
}

/// `check`: audits a bundled problem at `points` seeded random points.
pub fn cmd_check(spec: &ProblemSpec, points: usize, seed: u64, out: &mut dyn Write) -> u8 {
    let problem = match make_problem(spec) {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            return EXIT_ERROR;
        }
    };
    let pts: Vec<BlockPoint> = (0..points as u64)
        .map(|k| problem.random_start(seed.wrapping_add(k)))
        .collect();
    match check_objective(&problem, &pts, seed) {
        Ok(report) => print_check(&report, out),
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            EXIT_ERROR
        }
    }
}

/// `report`: re-verifies a trace (and its summary, when present next to it).
pub fn cmd_report(trace: &Path, out: &mut dyn Write) -> u8 {
    match report_inner(trace, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(out, "{e}");
            e.exit_code()
        }
    }
}

fn report_inner(trace: &Path, out: &mut dyn Write) -> Result<(), TraceError> {
    let text = fs::read_to_string(trace)
        .map_err(|e| TraceError::Io(format!("{}: {e}", trace.display())))?;
    let summary_file: Option<PathBuf> = summary_path_for_trace(trace).filter(|p| p.exists());
    let summary = match &summary_file {
        Some(p) => {
            let json = fs::read_to_string(p)
                .map_err(|e| TraceError::Io(format!("{}: {e}", p.display())))?;
            Some(
                serde_json::from_str::<Summary>(&json)
                    .map_err(|e| TraceError::SchemaMismatch(format!("{}: {e}", p.display())))?,
            )
        }
        None => None,
    };
    let v = verify_trace(&text, summary.as_ref())?;
    let c = &v.certificate;
    let _ = writeln!(out, "trace: {} ({} rows)", trace.display(), c.iterations);
    match &summary_file {
        Some(p) => {
            let _ = writeln!(out, "summary: {} matches the recomputation", p.display());
        }
        None => {
            let _ = writeln!(out, "summary: none found, trace checked on its own");
        }
    }
    let _ = writeln!(
        out,
        "telescoping: sum {} <= f0 - f_T = {} at every prefix",
        num(c.running_sum),
        num(c.f0 - c.f_final)
    );
    if let Ok((m, b)) = c.min_grad_bound() {
        let _ = writeln!(
            out,
            "rate bound: min ‖∇f‖² = {} <= {} at every prefix",
            num(m),
            num(b)
        );
    }
    let _ = writeln!(out, "fitted log-log slope: {}", v.rate_fit);
    Ok(())
}
