//! Independent numerical oracles used to audit objectives: central-difference
//! gradient checks, sampled Lipschitz probing, and a power-iteration spectral
//! norm. Nothing here is on the solver's hot path.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::problem::{check_dims, BlockPoint, Objective, Vector};

/// Default relative central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// A coordinate in one of the two blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "block", content = "index", rename_all = "lowercase")]
pub enum Coordinate {
    X(usize),
    Y(usize),
}

impl fmt::Display for Coordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coordinate::X(i) => write!(f, "x[{i}]"),
            Coordinate::Y(i) => write!(f, "y[{i}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiniteDiffReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// `None` when both blocks are empty.
    pub worst_index: Option<Coordinate>,
    pub h: f64,
    pub checked_x: usize,
    pub checked_y: usize,
}

impl FiniteDiffReport {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel_err <= rel_tol
    }
}

/// Compares analytic block gradients against central differences.
///
/// Coordinate `i` is perturbed by `h * max(1, |p_i|)`; the relative error is
/// `|fd - analytic| / max(1, |analytic|)`.
pub fn fd_check_gradients<O: Objective + ?Sized>(
    obj: &O,
    p: &BlockPoint,
    h: f64,
) -> Result<FiniteDiffReport> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "finite-difference step {h}"
        )));
    }
    check_dims(obj, p)?;
    let gx = obj.grad_x(p);
    let gy = obj.grad_y(p);

    let mut report = FiniteDiffReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst_index: None,
        h,
        checked_x: gx.len(),
        checked_y: gy.len(),
    };

    let mut record = |coord: Coordinate, fd: f64, analytic: f64| -> Result<()> {
        if !fd.is_finite() || !analytic.is_finite() {
            return Err(Error::NonFiniteValue(format!("gradient check at {coord}")));
        }
        let abs = (fd - analytic).abs();
        let rel = abs / analytic.abs().max(1.0);
        if report.worst_index.is_none() || rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_index = Some(coord);
        }
        report.max_abs_err = report.max_abs_err.max(abs);
        Ok(())
    };

    let (x, y) = (p.x(), p.y());
    for i in 0..x.len() {
        let step = h * x[i].abs().max(1.0);
        let mut xp = x.clone();
        xp[i] += step;
        let mut xm = x.clone();
        xm[i] -= step;
        let fp = obj.value(&BlockPoint::new(xp, y.clone())?);
        let fm = obj.value(&BlockPoint::new(xm, y.clone())?);
        record(Coordinate::X(i), (fp - fm) / (2.0 * step), gx[i])?;
    }
    for j in 0..y.len() {
        let step = h * y[j].abs().max(1.0);
        let mut yp = y.clone();
        yp[j] += step;
        let mut ym = y.clone();
        ym[j] -= step;
        let fp = obj.value(&BlockPoint::new(x.clone(), yp)?);
        let fm = obj.value(&BlockPoint::new(x.clone(), ym)?);
        record(Coordinate::Y(j), (fp - fm) / (2.0 * step), gy[j])?;
    }
    Ok(report)
}

/// Axis-aligned box `[lo, hi]` in x-space.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub lo: Vector,
    pub hi: Vector,
}

impl Region {
    pub fn new(lo: Vector, hi: Vector) -> Self {
        Self { lo, hi }
    }

    /// The box `center ± radius` in every coordinate.
    pub fn around(center: &Vector, radius: f64) -> Self {
        Self {
            lo: center.add_scalar(-radius),
            hi: center.add_scalar(radius),
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> Vector {
        Vector::from_iterator(
            self.lo.len(),
            self.lo
                .iter()
                .zip(self.hi.iter())
                .map(|(&l, &h)| rng.gen_range(l..h)),
        )
    }
}

/// Largest observed gradient-difference ratio
/// `‖∇_x f(x', y) - ∇_x f(x, y)‖ / ‖x' - x‖` over `samples` random pairs in
/// `region`.
///
/// This is a lower estimate of the true Lipschitz constant on the region. It
/// can expose an oracle that under-reports `L`, never prove one correct.
pub fn probe_lipschitz_x<O: Objective + ?Sized>(
    obj: &O,
    y: &Vector,
    region: &Region,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if samples < 2 {
        return Err(Error::InvalidParameter(format!(
            "probe needs at least 2 samples, got {samples}"
        )));
    }
    let (n_x, n_y) = obj.dims();
    if region.lo.len() != n_x || region.hi.len() != n_x || y.len() != n_y {
        return Err(Error::DimensionMismatch {
            expected_x: n_x,
            expected_y: n_y,
            got_x: region.lo.len(),
            got_y: y.len(),
        });
    }
    let degenerate = n_x == 0
        || region
            .lo
            .iter()
            .zip(region.hi.iter())
            .any(|(l, h)| !(h > l) || !l.is_finite() || !h.is_finite());
    if degenerate {
        return Err(Error::DegenerateRegion);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0_f64;
    for _ in 0..samples {
        let a = region.sample(&mut rng);
        let b = region.sample(&mut rng);
        let dist = (&b - &a).norm();
        if dist == 0.0 {
            continue;
        }
        let ga = obj.grad_x(&BlockPoint::new(a, y.clone())?);
        let gb = obj.grad_x(&BlockPoint::new(b, y.clone())?);
        let ratio = (gb - ga).norm() / dist;
        if !ratio.is_finite() {
            return Err(Error::NonFiniteValue("Lipschitz probe".into()));
        }
        best = best.max(ratio);
    }
    Ok(best)
}

const POWER_ITER_CAP: usize = 100_000;

/// Largest singular value of `m`, by power iteration on `mᵀm`.
///
/// Starts from the normalized all-ones vector; if the iterate collapses to
/// zero (start orthogonal to the dominant subspace) it restarts from a
/// deterministic perturbation. Stops when the relative change of the
/// estimate falls below `tol`.
pub fn spectral_norm(m: &DMatrix<f64>, tol: f64) -> Result<f64> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue("matrix entry".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance {tol}")));
    }
    let n = m.ncols();
    if n == 0 || m.nrows() == 0 {
        return Ok(0.0);
    }
    let gram = m.transpose() * m;
    if gram.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }

    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut restarts = 0;
    let mut estimate = 0.0_f64;
    for _ in 0..POWER_ITER_CAP {
        let w = &gram * &v;
        let w_norm = w.norm();
        if w_norm == 0.0 {
            // Stagnated in the null space of the Gram matrix.
            restarts += 1;
            v = DVector::from_fn(n, |i, _| {
                1.0 + ((i + restarts) as f64 * 0.618_033_988_749_895).fract()
            });
            v /= v.norm();
            continue;
        }
        let next = v.dot(&w);
        v = w / w_norm;
        if estimate > 0.0 && ((next - estimate).abs() <= tol * next) {
            // Rayleigh quotient at the fresh iterate.
            let rq = v.dot(&(&gram * &v));
            return Ok(rq.max(next).sqrt());
        }
        estimate = next;
    }
    Err(Error::NoConvergence {
        iters: POWER_ITER_CAP,
    })
}

/// Largest eigenvalue of a symmetric matrix (dense, exact up to rounding).
pub fn symmetric_max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Extreme eigenvalues `(min, max)` of a symmetric matrix.
pub fn symmetric_eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (0.0, 0.0);
    }
    let eig = m.clone().symmetric_eigen().eigenvalues;
    (eig.min(), eig.max())
}

/// Solves `m z = rhs` for symmetric positive definite `m`.
///
/// Reports [`Error::SingularSystem`] when the Cholesky factorization fails or
/// the eigenvalue ratio is below `1e-12`. One step of iterative refinement
/// is applied to the Cholesky solution.
pub fn solve_spd(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, rhs.ncols()));
    }
    let (lo, hi) = symmetric_eigen_range(m);
    if !(lo > 1e-12 * hi) {
        return Err(Error::SingularSystem);
    }
    let chol = m.clone().cholesky().ok_or(Error::SingularSystem)?;
    let z = chol.solve(rhs);
    let residual = rhs - m * &z;
    Ok(z + chol.solve(&residual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{
        CoupledQuadratic, MatrixFactorization, TightQuadratic, TwoBlockRosenbrock,
    };
    use proptest::prelude::*;

    #[test]
    fn fd_exact_on_quadratic() {
        let q = TightQuadratic::new(4.0, 0.0, vec![0.0], vec![0.0]).unwrap();
        let p = BlockPoint::from_slices(&[1.0], &[]).unwrap();
        let r = fd_check_gradients(&q, &p, 1e-3).unwrap();
        assert!(r.max_rel_err <= 1e-12, "{r:?}");
        assert_eq!(r.checked_y, 0);
        assert_eq!(r.worst_index, Some(Coordinate::X(0)));
    }

    #[test]
    fn fd_on_rosenbrock() {
        let f = TwoBlockRosenbrock::new(100.0).unwrap();
        let p = BlockPoint::from_slices(&[0.5], &[0.2]).unwrap();
        let r = fd_check_gradients(&f, &p, 1e-5).unwrap();
        assert!(r.max_rel_err <= 1e-6, "{r:?}");
    }

    #[test]
    fn fd_rejects_bad_step() {
        let q = TightQuadratic::new(4.0, 0.0, vec![0.0], vec![0.0]).unwrap();
        let p = BlockPoint::from_slices(&[1.0], &[]).unwrap();
        assert!(fd_check_gradients(&q, &p, 0.0).is_err());
    }

    #[test]
    fn probe_quadratics() {
        let q = TightQuadratic::new(4.0, 1.0, vec![1.0, -2.0], vec![0.5, 3.0]).unwrap();
        let region = Region::around(&Vector::from_vec(vec![0.0, 0.0]), 3.0);
        for seed in 0..5 {
            let l = probe_lipschitz_x(&q, &Vector::zeros(0), &region, 20, seed).unwrap();
            assert!((l - 4.0).abs() <= 1e-12, "{l}");
        }

        let c = CoupledQuadratic::scalar(1.0, 1.0, 2.0, 0.0, 0.0).unwrap();
        let region = Region::around(&Vector::from_vec(vec![0.0]), 2.0);
        let l = probe_lipschitz_x(&c, &Vector::from_vec(vec![0.7]), &region, 10, 3).unwrap();
        assert!((l - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn probe_factorization_identity_y() {
        let mf = MatrixFactorization::new(DMatrix::identity(2, 2), 2).unwrap();
        let y = Vector::from_column_slice(DMatrix::<f64>::identity(2, 2).as_slice());
        let region = Region::around(&Vector::zeros(4), 1.0);
        let l = probe_lipschitz_x(&mf, &y, &region, 50, 11).unwrap();
        assert!((l - 1.0).abs() <= 1e-10, "{l}");
    }

    #[test]
    fn probe_is_deterministic() {
        let f = TwoBlockRosenbrock::new(100.0).unwrap();
        let region = Region::around(&Vector::from_vec(vec![0.0]), 1.0);
        let y = Vector::from_vec(vec![0.5]);
        let a = probe_lipschitz_x(&f, &y, &region, 30, 9).unwrap();
        let b = probe_lipschitz_x(&f, &y, &region, 30, 9).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn probe_rejects_degenerate_region() {
        let q = TightQuadratic::new(4.0, 0.0, vec![0.0, 0.0], vec![0.0, 0.0]).unwrap();
        let region = Region::new(
            Vector::from_vec(vec![0.0, 1.0]),
            Vector::from_vec(vec![1.0, 1.0]),
        );
        assert_eq!(
            probe_lipschitz_x(&q, &Vector::zeros(0), &region, 10, 0),
            Err(Error::DegenerateRegion)
        );
        let region = Region::around(&Vector::zeros(2), 1.0);
        assert!(probe_lipschitz_x(&q, &Vector::zeros(0), &region, 1, 0).is_err());
    }

    #[test]
    fn spectral_norm_known_values() {
        assert!((spectral_norm(&DMatrix::identity(3, 3), 1e-14).unwrap() - 1.0).abs() < 1e-12);
        let d = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        assert!((spectral_norm(&d, 1e-14).unwrap() - 3.0).abs() < 1e-12);
        let j = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let s = spectral_norm(&j, 1e-14).unwrap();
        // Cross-check against a dense eigensolve of JᵀJ.
        let dense = symmetric_max_eigenvalue(&(j.transpose() * &j)).sqrt();
        assert!((s - 1.618_034).abs() < 1e-6);
        assert!((s - dense).abs() < 1e-10);
        assert_eq!(spectral_norm(&DMatrix::zeros(2, 3), 1e-10).unwrap(), 0.0);
    }

    #[test]
    fn spectral_norm_recovers_from_orthogonal_start() {
        // All-ones start lies in the null space of this Gram matrix.
        let m = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let s = spectral_norm(&m, 1e-14).unwrap();
        assert!((s - 2f64.sqrt()).abs() < 1e-12, "{s}");
    }

    #[test]
    fn solve_spd_detects_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(
            solve_spd(&m, &DMatrix::from_element(2, 1, 1.0)),
            Err(Error::SingularSystem)
        );
    }

    proptest! {
        #[test]
        fn spectral_norm_transpose_and_scaling(
            entries in proptest::collection::vec(-3.0f64..3.0, 12),
            c in -5.0f64..5.0,
        ) {
            let m = DMatrix::from_row_slice(3, 4, &entries);
            let s = spectral_norm(&m, 1e-13).unwrap();
            let st = spectral_norm(&m.transpose(), 1e-13).unwrap();
            let sc = spectral_norm(&(&m * c), 1e-13).unwrap();
            let dense = symmetric_max_eigenvalue(&(m.transpose() * &m)).max(0.0).sqrt();
            let tol = 1e-6 * dense.max(1.0);
            prop_assert!((s - dense).abs() <= tol);
            prop_assert!((s - st).abs() <= tol);
            prop_assert!((sc - c.abs() * s).abs() <= tol * c.abs().max(1.0));
        }
    }
}
