//! The outer two-block loop and the joint gradient-descent baseline.

use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::certificate::{
    check_step, default_check_tol, e_still_growing, Certificate, IterationRecord,
};
use crate::error::{Error, Result};
use crate::problem::{check_dims, evaluate, value_at, BlockPoint, Objective};
use crate::strategies::{full_gradient_step, stationary_y, update_x, BacktrackParams, XStrategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub x_strategy: XStrategy,
    /// Relative y-stationarity tolerance; the absolute tolerance of each
    /// y-step is `y_tol · max(1, ‖∇_y f‖)` at the point it starts from.
    pub y_tol: f64,
    /// Stop once `‖∇f‖` at a y-stationary iterate drops to this.
    pub grad_tol: f64,
    pub max_iters: usize,
    pub backtrack: BacktrackParams,
    /// Relative certificate tolerance; absolute is `check_tol · max(1, |f0|)`.
    pub check_tol: f64,
    /// Seed for generated start points.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            x_strategy: XStrategy::FixedStep,
            y_tol: 1e-10,
            grad_tol: 1e-8,
            max_iters: 1000,
            backtrack: BacktrackParams::default(),
            check_tol: 1e-10,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn with_strategy(x_strategy: XStrategy) -> Self {
        Self {
            x_strategy,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("y_tol", self.y_tol),
            ("grad_tol", self.grad_tol),
            ("check_tol", self.check_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter(
                "max_iters must be at least 1".into(),
            ));
        }
        self.backtrack.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradTolMet,
    MaxIters,
    Error,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::GradTolMet => "grad_tol_met",
            StopReason::MaxIters => "max_iters",
            StopReason::Error => "error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    BlockCoordinate { x_strategy: XStrategy },
    GradientDescent { step: f64 },
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::BlockCoordinate { x_strategy } => write!(f, "bcd/{}", x_strategy.as_str()),
            Method::GradientDescent { step } => write!(f, "gd/step={step}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub method: Method,
    pub final_point: BlockPoint,
    pub certificate: Certificate,
    pub history: Vec<IterationRecord>,
    pub stop_reason: StopReason,
    /// `‖∇_y f(x_0, y_0)‖` after the initial y-step.
    pub initial_gy_residual: f64,
    pub lower_bound: Option<f64>,
    pub wall_time: Duration,
}

impl RunResult {
    /// Number of completed outer iterations, `T`.
    pub fn iterations(&self) -> usize {
        self.history.len()
    }

    /// Re-folds the history into a fresh certificate.
    pub fn replay_certificate(&self) -> Result<Certificate> {
        let mut cert = Certificate::from_history(
            self.certificate.f0,
            self.initial_gy_residual,
            self.certificate.check_tol,
            &self.history,
        )?;
        cert.aborted = self.stop_reason == StopReason::Error;
        Ok(cert)
    }

    /// The certified constant hit a new maximum late in the run.
    pub fn e_growing(&self) -> bool {
        e_still_growing(&self.history)
    }

    pub fn certified(&self) -> bool {
        matches!(self.method, Method::BlockCoordinate { .. }) && self.certificate.passed()
    }
}

/// A run that stopped on an error. `partial` holds everything completed
/// before the failure (absent if the run failed before iteration 0).
#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub error: Error,
    pub partial: Option<Box<RunResult>>,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.partial {
            Some(p) => write!(f, "{} (after {} iterations)", self.error, p.iterations()),
            None => write!(f, "{}", self.error),
        }
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Error> for RunFailure {
    fn from(error: Error) -> Self {
        Self {
            error,
            partial: None,
        }
    }
}

struct Run {
    method: Method,
    point: BlockPoint,
    f: f64,
    cert: Certificate,
    history: Vec<IterationRecord>,
    initial_gy_residual: f64,
    lower_bound: Option<f64>,
    started: Instant,
}

impl Run {
    fn finish(self, stop_reason: StopReason) -> RunResult {
        RunResult {
            method: self.method,
            final_point: self.point,
            certificate: self.cert,
            history: self.history,
            stop_reason,
            initial_gy_residual: self.initial_gy_residual,
            lower_bound: self.lower_bound,
            wall_time: self.started.elapsed(),
        }
    }

    fn fail(mut self, error: Error) -> RunFailure {
        self.cert.aborted = true;
        RunFailure {
            error,
            partial: Some(Box::new(self.finish(StopReason::Error))),
        }
    }
}

/// Two-block coordinate descent with a running certificate.
///
/// The start is first made y-stationary. Each iteration then measures the
/// gradients at `(x_t, y_t)`, applies the configured x-update, re-solves the
/// y block, and folds an [`IterationRecord`] into the certificate.
pub fn solve<O: Objective + ?Sized>(
    obj: &O,
    start: &BlockPoint,
    cfg: &SolverConfig,
) -> std::result::Result<RunResult, RunFailure> {
    let started = Instant::now();
    cfg.validate()?;
    check_dims(obj, start)?;

    let gy_start = evaluate(obj, start)?.grad_y_norm();
    let init = stationary_y(obj, start, cfg.y_tol * gy_start.max(1.0))?;
    let point = start.with_y(init.y_next)?;
    let f0 = value_at(obj, &point)?;

    let mut run = Run {
        method: Method::BlockCoordinate {
            x_strategy: cfg.x_strategy,
        },
        point,
        f: f0,
        cert: Certificate::new(f0, init.residual, cfg.check_tol * f0.abs().max(1.0)),
        history: Vec::new(),
        initial_gy_residual: init.residual,
        lower_bound: obj.lower_bound(),
        started,
    };
    let mut backtrack = cfg.backtrack;

    for t in 0..=cfg.max_iters {
        let ev = match evaluate(obj, &run.point) {
            Ok(ev) => ev,
            Err(e) => return Err(run.fail(e)),
        };
        if ev.full_grad_norm() <= cfg.grad_tol {
            return Ok(run.finish(StopReason::GradTolMet));
        }
        if t == cfg.max_iters {
            break;
        }

        let step = (|| -> Result<(BlockPoint, f64, f64, f64, f64)> {
            let upd = update_x(cfg.x_strategy, obj, &run.point, &backtrack)?;
            let half = run.point.with_x(upd.x_next)?;
            let f_after_x = value_at(obj, &half)?;
            let y_tol = cfg.y_tol * obj.grad_y(&half).norm().max(1.0);
            let ys = stationary_y(obj, &half, y_tol)?;
            let next = half.with_y(ys.y_next)?;
            let f_after_y = value_at(obj, &next)?;
            Ok((next, f_after_x, f_after_y, ys.residual, upd.e_t))
        })();
        let (next, f_after_x, f_after_y, gy_residual, e_t) = match step {
            Ok(s) => s,
            Err(e) => return Err(run.fail(e)),
        };
        if cfg.x_strategy == XStrategy::Backtracking {
            // The estimate only ever grows within a run.
            backtrack.l_init = backtrack.l_init.max(e_t);
        }

        let mut rec = IterationRecord {
            t,
            f_before: run.f,
            f_after_x,
            f_after_y,
            gx_norm_sq: ev.grad_x_norm_sq(),
            gy_residual,
            e_t,
            suff_ok: false,
        };
        rec.suff_ok = check_step(&rec, run.cert.check_tol);
        if let Err(e) = run.cert.accumulate(&rec) {
            return Err(run.fail(e));
        }
        run.history.push(rec);
        run.point = next;
        run.f = f_after_y;
    }
    Ok(run.finish(StopReason::MaxIters))
}

/// Joint gradient descent `p ← p − step · ∇f` with the same record layout.
///
/// Records carry the full `‖∇f‖²` in `gx_norm_sq` and `e_t = 1 / step`; the
/// certificate is informational only. A diverging run fails with
/// [`Error::NonFiniteValue`] and keeps its partial trace.
pub fn solve_gd_baseline<O: Objective + ?Sized>(
    obj: &O,
    start: &BlockPoint,
    step: f64,
    max_iters: usize,
) -> std::result::Result<RunResult, RunFailure> {
    let started = Instant::now();
    if !(step >= 0.0 && step.is_finite()) {
        return Err(Error::InvalidParameter(format!("step {step}")).into());
    }
    let ev0 = evaluate(obj, start)?;
    let f0 = ev0.value;
    let mut run = Run {
        method: Method::GradientDescent { step },
        point: start.clone(),
        f: f0,
        cert: Certificate::new(f0, ev0.grad_y_norm(), default_check_tol(f0)),
        history: Vec::new(),
        initial_gy_residual: ev0.grad_y_norm(),
        lower_bound: obj.lower_bound(),
        started,
    };
    let e_t = if step > 0.0 {
        1.0 / step
    } else {
        f64::INFINITY
    };

    for t in 0..max_iters {
        let step_result = (|| -> Result<(BlockPoint, f64, f64, f64)> {
            let ev = evaluate(obj, &run.point)?;
            let next = full_gradient_step(obj, &run.point, step)?;
            let f_next = value_at(obj, &next)?;
            let gy_next = obj.grad_y(&next).norm();
            Ok((
                next,
                f_next,
                ev.grad_x_norm_sq() + ev.grad_y.norm_squared(),
                gy_next,
            ))
        })();
        let (next, f_next, grad_sq, gy_next) = match step_result {
            Ok(s) => s,
            Err(e) => return Err(run.fail(e)),
        };
        if grad_sq == 0.0 {
            return Ok(run.finish(StopReason::GradTolMet));
        }
        let mut rec = IterationRecord {
            t,
            f_before: run.f,
            f_after_x: f_next,
            f_after_y: f_next,
            gx_norm_sq: grad_sq,
            gy_residual: gy_next,
            e_t,
            suff_ok: false,
        };
        rec.suff_ok = check_step(&rec, run.cert.check_tol);
        if let Err(e) = run.cert.accumulate(&rec) {
            return Err(run.fail(e));
        }
        run.history.push(rec);
        run.point = next;
        run.f = f_next;
    }
    Ok(run.finish(StopReason::MaxIters))
}
