//! Runtime convergence certificate for two-block coordinate descent.
//!
//! With `y_t` block-stationary and every x-update certified by some `e_t`,
//! each outer iteration satisfies
//!
//! ```text
//! ‖∇f(x_t, y_t)‖² / (2 e_t) <= f(x_t, y_t) - f(x_{t+1}, y_{t+1})
//! ```
//!
//! Summing over `t < T` gives
//!
//! ```text
//! Σ_t ‖∇f_t‖² / (2 e_t) <= f_0 - f_T
//! min_t ‖∇f_t‖²         <= 2 e_max (f_0 - f_T) / T
//! ```
//!
//! so the smallest gradient norm decays like `T^{-1/2}`. The [`Certificate`]
//! folds [`IterationRecord`]s and checks all three inequalities at every
//! prefix, using `‖∇_x f‖²` for `‖∇f‖²` and tracking the y residual
//! separately.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One outer iteration's audit trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    /// `f(x_t, y_t)`.
    pub f_before: f64,
    /// `f(x_{t+1}, y_t)`.
    pub f_after_x: f64,
    /// `f(x_{t+1}, y_{t+1})`.
    pub f_after_y: f64,
    /// `‖∇_x f(x_t, y_t)‖²`.
    pub gx_norm_sq: f64,
    /// `‖∇_y f(x_{t+1}, y_{t+1})‖` after the y-step.
    pub gy_residual: f64,
    pub e_t: f64,
    pub suff_ok: bool,
}

/// Default check tolerance `1e-10 · max(1, |f0|)`.
pub fn default_check_tol(f0: f64) -> f64 {
    1e-10 * f0.abs().max(1.0)
}

/// Per-step check: the x-step reaches `gx_norm_sq / (2 e_t)` of decrease
/// and the y-step does not increase `f`, both up to `tol`.
///
/// A failed check is a `false`, never an error.
pub fn check_step(rec: &IterationRecord, tol: f64) -> bool {
    let fields = [
        rec.f_before,
        rec.f_after_x,
        rec.f_after_y,
        rec.gx_norm_sq,
        rec.gy_residual,
        rec.e_t,
    ];
    if fields.iter().any(|v| !v.is_finite()) || !(rec.e_t > 0.0) || rec.gx_norm_sq < 0.0 {
        return false;
    }
    let required = rec.gx_norm_sq / (2.0 * rec.e_t);
    rec.f_before - rec.f_after_x >= required - tol && rec.f_after_y <= rec.f_after_x + tol
}

/// A running fold over iteration records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub f0: f64,
    pub f_final: f64,
    /// Number of accumulated records, `T`.
    pub iterations: usize,
    /// `Σ_t gx_norm_sq_t / (2 e_t)`.
    pub running_sum: f64,
    /// `max_t e_t`; `0` while empty.
    pub e_max: f64,
    /// `min_t e_t`; `+∞` while empty.
    pub e_min: f64,
    /// `min_t gx_norm_sq_t`; `+∞` while empty.
    pub min_grad_sq: f64,
    /// `2 e_max (f0 − f_final) / T`; `+∞` while empty.
    pub rate_bound: f64,
    /// Largest y-stationarity residual seen, including the initial y-step.
    pub max_gy_residual: f64,
    pub check_tol: f64,
    pub all_steps_ok: bool,
    /// Telescoping bound held at every prefix.
    pub telescope_ok: bool,
    /// Min-gradient rate bound held at every prefix.
    pub rate_ok: bool,
    /// Set when the run that produced this certificate aborted.
    pub aborted: bool,
}

impl Certificate {
    pub fn new(f0: f64, initial_gy_residual: f64, check_tol: f64) -> Self {
        Self {
            f0,
            f_final: f0,
            iterations: 0,
            running_sum: 0.0,
            e_max: 0.0,
            e_min: f64::INFINITY,
            min_grad_sq: f64::INFINITY,
            rate_bound: f64::INFINITY,
            max_gy_residual: initial_gy_residual,
            check_tol,
            all_steps_ok: true,
            telescope_ok: true,
            rate_ok: true,
            aborted: false,
        }
    }

    /// Folds a complete history.
    pub fn from_history(
        f0: f64,
        initial_gy_residual: f64,
        check_tol: f64,
        history: &[IterationRecord],
    ) -> Result<Self> {
        let mut cert = Self::new(f0, initial_gy_residual, check_tol);
        for rec in history {
            cert.accumulate(rec)?;
        }
        Ok(cert)
    }

    /// Tolerance applied to the rate bound: the per-step slack `check_tol`
    /// propagated through `2 e_max`.
    pub fn rate_tolerance(&self) -> f64 {
        2.0 * self.e_max * self.check_tol
    }

    /// Adds one record and re-checks every inequality on the new prefix.
    pub fn accumulate(&mut self, rec: &IterationRecord) -> Result<()> {
        if rec.t != self.iterations {
            return Err(Error::OutOfOrderRecord {
                expected: self.iterations,
                got: rec.t,
            });
        }
        let step_ok = check_step(rec, self.check_tol);
        self.all_steps_ok &= step_ok;

        self.iterations += 1;
        if rec.e_t > 0.0 {
            self.running_sum += rec.gx_norm_sq / (2.0 * rec.e_t);
        } else {
            self.running_sum = f64::INFINITY;
        }
        self.e_max = self.e_max.max(rec.e_t);
        self.e_min = self.e_min.min(rec.e_t);
        self.min_grad_sq = self.min_grad_sq.min(rec.gx_norm_sq);
        self.max_gy_residual = self.max_gy_residual.max(rec.gy_residual);
        self.f_final = rec.f_after_y;
        self.rate_bound = 2.0 * self.e_max * (self.f0 - self.f_final) / self.iterations as f64;

        self.telescope_ok &= self.verify_telescope(self.check_tol);
        self.rate_ok &= self.min_grad_sq <= self.rate_bound + self.rate_tolerance();
        Ok(())
    }

    /// `running_sum ≤ f0 − f_final + tol` on the current prefix.
    pub fn verify_telescope(&self, tol: f64) -> bool {
        self.running_sum <= self.f0 - self.f_final + tol
    }

    /// `(min_t gx_norm_sq_t, 2 e_max (f0 − f_final) / T)`.
    pub fn min_grad_bound(&self) -> Result<(f64, f64)> {
        if self.iterations == 0 {
            return Err(Error::EmptyHistory);
        }
        Ok((self.min_grad_sq, self.rate_bound))
    }

    /// `e_min > 0`, vacuous while empty.
    pub fn e_lower_bound_ok(&self) -> bool {
        self.iterations == 0 || self.e_min > 0.0
    }

    /// Every check passed and the run finished normally.
    pub fn passed(&self) -> bool {
        self.all_steps_ok
            && self.telescope_ok
            && self.rate_ok
            && self.e_lower_bound_ok()
            && !self.aborted
    }
}

/// Whether `e_t` reached a new maximum during the last tenth of the history,
/// a sign the certified constant has not stabilized.
pub fn e_still_growing(history: &[IterationRecord]) -> bool {
    if history.len() < 10 {
        return false;
    }
    let split = history.len() - history.len() / 10;
    let early = history[..split]
        .iter()
        .map(|r| r.e_t)
        .fold(f64::NEG_INFINITY, f64::max);
    history[split..].iter().any(|r| r.e_t > early)
}

/// Minimum number of records [`fit_rate`] accepts.
pub const MIN_FIT_RECORDS: usize = 10;

/// Least-squares slope of `log min_{s≤t} ‖∇_x f_s‖` against `log(t + 1)`.
///
/// The guarantee corresponds to a slope of at most `-1/2`.
pub fn fit_rate(history: &[IterationRecord]) -> Result<f64> {
    if history.len() < MIN_FIT_RECORDS {
        return Err(Error::InsufficientHistory {
            needed: MIN_FIT_RECORDS,
            got: history.len(),
        });
    }
    let mut best = f64::INFINITY;
    let mut points = Vec::with_capacity(history.len());
    for (t, rec) in history.iter().enumerate() {
        best = best.min(rec.gx_norm_sq);
        if !(best > 0.0) {
            return Err(Error::DegenerateFit);
        }
        points.push((((t + 1) as f64).ln(), 0.5 * best.ln()));
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (sxy, sxx) = points.iter().fold((0.0, 0.0), |(sxy, sxx), &(x, y)| {
        (
            sxy + (x - mean_x) * (y - mean_y),
            sxx + (x - mean_x).powi(2),
        )
    });
    Ok(sxy / sxx)
}
