//! Block update rules.
//!
//! Every x-update returns a constant `e_t` for which the step provably (and,
//! here, checkably) satisfies
//!
//! ```text
//! f(x_t, y_t) - f(x_{t+1}, y_t) >= ‖∇_x f(x_t, y_t)‖² / (2 e_t)
//! ```
//!
//! The y-update drives `∇_y f` to zero without increasing `f`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{
    check_dims, evaluate, finite_vector, value_at, BlockPoint, Objective, Vector,
};

/// Additive slack for decrease comparisons at objective magnitude `f`.
pub fn decrease_tolerance(f: f64) -> f64 {
    1e-12 * f.abs().max(1.0)
}

/// Which rule updates the x block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XStrategy {
    FixedStep,
    ExactMin,
    Backtracking,
}

impl XStrategy {
    pub const ALL: [XStrategy; 3] = [
        XStrategy::FixedStep,
        XStrategy::ExactMin,
        XStrategy::Backtracking,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            XStrategy::FixedStep => "fixed_step",
            XStrategy::ExactMin => "exact_min",
            XStrategy::Backtracking => "backtracking",
        }
    }

    /// Whether `obj` exposes the oracles this rule needs.
    pub fn applicable<O: Objective + ?Sized>(self, obj: &O, y: &Vector) -> bool {
        match self {
            XStrategy::FixedStep => obj.lipschitz_x(y).is_some(),
            XStrategy::ExactMin => obj.has_exact_min_x() && obj.lipschitz_x(y).is_some(),
            XStrategy::Backtracking => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct XUpdateResult {
    pub x_next: Vector,
    /// Certified constant of the sufficient-decrease inequality for this step.
    pub e_t: f64,
    pub inner_evals: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktrackParams {
    pub l_init: f64,
    pub growth: f64,
    pub max_rejects: usize,
}

impl Default for BacktrackParams {
    fn default() -> Self {
        Self {
            l_init: 1.0,
            growth: 2.0,
            max_rejects: 60,
        }
    }
}

impl BacktrackParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.l_init > 0.0 && self.l_init.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "l_init must be positive, got {}",
                self.l_init
            )));
        }
        if !(self.growth > 1.0 && self.growth.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "growth must exceed 1, got {}",
                self.growth
            )));
        }
        if self.max_rejects == 0 {
            return Err(Error::InvalidParameter(
                "max_rejects must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

fn lipschitz_for<O: Objective + ?Sized>(obj: &O, y: &Vector) -> Result<f64> {
    let l = obj.lipschitz_x(y).ok_or(Error::MissingLipschitzOracle)?;
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "Lipschitz oracle returned {l}"
        )));
    }
    Ok(l)
}

/// `x_{t+1} = x_t − ∇_x f / L(y_t)` with `e_t = L(y_t)`.
///
/// A step that misses the guaranteed decrease means the Lipschitz oracle is
/// wrong, and is reported as [`Error::SufficientDecreaseViolated`].
pub fn fixed_step_gradient_x<O: Objective + ?Sized>(
    obj: &O,
    p: &BlockPoint,
) -> Result<XUpdateResult> {
    check_dims(obj, p)?;
    let l = lipschitz_for(obj, p.y())?;
    let ev = evaluate(obj, p)?;
    let x_next = finite_vector(p.x() - &ev.grad_x / l, "fixed-step iterate")?;
    let f_next = value_at(obj, &p.with_x(x_next.clone())?)?;

    let decrease = ev.value - f_next;
    let required = ev.grad_x_norm_sq() / (2.0 * l);
    if decrease < required - decrease_tolerance(ev.value) {
        return Err(Error::SufficientDecreaseViolated {
            decrease,
            required,
            lipschitz: l,
        });
    }
    Ok(XUpdateResult {
        x_next,
        e_t: l,
        inner_evals: 2,
    })
}

/// `x_{t+1} = argmin_x f(x, y_t)`, certified with `e_t = L(y_t)`.
pub fn exact_min_x<O: Objective + ?Sized>(obj: &O, p: &BlockPoint) -> Result<XUpdateResult> {
    check_dims(obj, p)?;
    if !obj.has_exact_min_x() {
        return Err(Error::MissingExactMinimizer);
    }
    let l = lipschitz_for(obj, p.y())?;
    let x_next = finite_vector(obj.exact_min_x(p.y())?, "exact x minimizer")?;
    if x_next.len() != p.x().len() {
        return Err(Error::DimensionMismatch {
            expected_x: p.x().len(),
            expected_y: p.y().len(),
            got_x: x_next.len(),
            got_y: p.y().len(),
        });
    }
    Ok(XUpdateResult {
        x_next,
        e_t: l,
        inner_evals: 1,
    })
}

/// Gradient step with an unknown Lipschitz constant.
///
/// Trials `L̂ = l_init · growth^k`, accepting the first step
/// `x' = x − ∇_x f / L̂` whose decrease reaches `‖∇_x f‖² / (2 L̂)`. The
/// accepted `L̂` is the certified `e_t`. Non-finite trial values count as
/// rejections.
pub fn backtracking_gradient_x<O: Objective + ?Sized>(
    obj: &O,
    p: &BlockPoint,
    params: &BacktrackParams,
) -> Result<XUpdateResult> {
    params.validate()?;
    let ev = evaluate(obj, p)?;
    let g = &ev.grad_x;
    let gsq = ev.grad_x_norm_sq();
    if gsq == 0.0 {
        return Ok(XUpdateResult {
            x_next: p.x().clone(),
            e_t: params.l_init,
            inner_evals: 1,
        });
    }
    let tol = decrease_tolerance(ev.value);
    let mut l = params.l_init;
    let mut rejects = 0;
    let mut evals = 1;
    loop {
        let trial = p.x() - g / l;
        if trial.iter().all(|v| v.is_finite()) {
            let f_trial = obj.value(&p.with_x(trial.clone())?);
            evals += 1;
            if f_trial.is_finite() && ev.value - f_trial >= gsq / (2.0 * l) - tol {
                return Ok(XUpdateResult {
                    x_next: trial,
                    e_t: l,
                    inner_evals: evals,
                });
            }
        }
        rejects += 1;
        if rejects > params.max_rejects {
            return Err(Error::BacktrackExhausted {
                rejects: params.max_rejects,
                last_estimate: l,
            });
        }
        l *= params.growth;
        if !l.is_finite() {
            return Err(Error::BacktrackExhausted {
                rejects,
                last_estimate: l,
            });
        }
    }
}

/// Dispatches one x-update.
pub fn update_x<O: Objective + ?Sized>(
    strategy: XStrategy,
    obj: &O,
    p: &BlockPoint,
    backtrack: &BacktrackParams,
) -> Result<XUpdateResult> {
    match strategy {
        XStrategy::FixedStep => fixed_step_gradient_x(obj, p),
        XStrategy::ExactMin => exact_min_x(obj, p),
        XStrategy::Backtracking => backtracking_gradient_x(obj, p, backtrack),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct YUpdateResult {
    pub y_next: Vector,
    /// `‖∇_y f(x, y_next)‖`.
    pub residual: f64,
    pub inner_evals: usize,
}

const INNER_DESCENT_CAP: usize = 100_000;

/// Default absolute y-stationarity tolerance: `1e-10 · max(1, ‖∇_y f(x, y)‖)`.
pub fn default_y_tol(grad_y_norm: f64) -> f64 {
    1e-10 * grad_y_norm.max(1.0)
}

/// Moves `y` to a point with `‖∇_y f(x, y)‖ ≤ tol` without increasing `f`.
///
/// Uses the exact block minimizer when the objective has one, polishing with
/// inner gradient descent if its residual misses `tol`; otherwise runs inner
/// descent from `p.y`. An already-stationary `y` is returned unchanged.
pub fn stationary_y<O: Objective + ?Sized>(
    obj: &O,
    p: &BlockPoint,
    tol: f64,
) -> Result<YUpdateResult> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("y tolerance {tol}")));
    }
    let ev = evaluate(obj, p)?;
    let residual0 = ev.grad_y_norm();
    if residual0 <= tol {
        return Ok(YUpdateResult {
            y_next: p.y().clone(),
            residual: residual0,
            inner_evals: 1,
        });
    }
    let f_tol = decrease_tolerance(ev.value);

    let mut evals = 1;
    let mut start = p.clone();
    let mut start_f = ev.value;
    if obj.has_exact_min_y() {
        let y_star = finite_vector(obj.exact_min_y(p.x())?, "exact y minimizer")?;
        let q = p.with_y(y_star)?;
        let fq = value_at(obj, &q)?;
        let rq = finite_vector(obj.grad_y(&q), "y-block gradient")?.norm();
        evals += 1;
        if fq <= ev.value + f_tol {
            if rq <= tol {
                return Ok(YUpdateResult {
                    y_next: q.into_parts().1,
                    residual: rq,
                    inner_evals: evals,
                });
            }
            start = q;
            start_f = fq;
        }
    }
    inner_descent_y(obj, start, start_f, tol, evals)
}

/// Gradient descent on `y` with a sufficient-decrease step search; the local
/// curvature estimate is halved after each accepted step.
fn inner_descent_y<O: Objective + ?Sized>(
    obj: &O,
    start: BlockPoint,
    start_f: f64,
    tol: f64,
    mut evals: usize,
) -> Result<YUpdateResult> {
    let f_tol = decrease_tolerance(start_f);
    let mut point = start;
    let mut f = start_f;
    let mut l = 1.0_f64;
    let mut residual = f64::INFINITY;
    for _ in 0..INNER_DESCENT_CAP {
        let g = finite_vector(obj.grad_y(&point), "y-block gradient")?;
        evals += 1;
        residual = g.norm();
        if residual <= tol {
            return Ok(YUpdateResult {
                y_next: point.into_parts().1,
                residual,
                inner_evals: evals,
            });
        }
        let gsq = residual * residual;
        loop {
            let trial = point.with_y(point.y() - &g / l);
            let f_trial = match &trial {
                Ok(t) => obj.value(t),
                Err(_) => f64::INFINITY,
            };
            evals += 1;
            if f_trial.is_finite()
                && (f - f_trial >= gsq / (2.0 * l)
                    || gradient_test(obj, &trial, &g, f_trial - start_f, f_tol))
            {
                point = trial?;
                f = f_trial;
                l = (l * 0.5).max(f64::MIN_POSITIVE);
                break;
            }
            l *= 2.0;
            if !l.is_finite() {
                return Err(Error::InnerSolveFailed {
                    iters: evals,
                    residual,
                    tol,
                });
            }
        }
    }
    Err(Error::InnerSolveFailed {
        iters: INNER_DESCENT_CAP,
        residual,
        tol,
    })
}

/// Fallback acceptance once value differences sink below rounding: `f` may
/// not rise more than `f_tol` above the start of the y-step, and the
/// gradient change over the step `g / l` must be at most `l` times its
/// length, i.e. `‖g' - g‖ ≤ ‖g‖`.
fn gradient_test<O: Objective + ?Sized>(
    obj: &O,
    trial: &Result<BlockPoint>,
    g: &Vector,
    rise: f64,
    f_tol: f64,
) -> bool {
    let Ok(t) = trial else { return false };
    if rise > f_tol {
        return false;
    }
    (obj.grad_y(t) - g).norm() <= g.norm()
}

/// Plain joint gradient step `(x, y) − step · (∇_x f, ∇_y f)`. Baseline only.
pub fn full_gradient_step<O: Objective + ?Sized>(
    obj: &O,
    p: &BlockPoint,
    step: f64,
) -> Result<BlockPoint> {
    if !(step >= 0.0 && step.is_finite()) {
        return Err(Error::InvalidParameter(format!("step {step}")));
    }
    let ev = evaluate(obj, p)?;
    let x = p.x() - &ev.grad_x * step;
    let y = p.y() - &ev.grad_y * step;
    BlockPoint::new(x, y).map_err(|_| Error::NonFiniteValue("gradient-descent iterate".into()))
}
