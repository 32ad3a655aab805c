//! Objective oracles and the two-block iterate.
//!
//! An [`Objective`] is a differentiable `f(x, y)` over two real blocks of
//! fixed dimensions `(n_x, n_y)`. Either block may be empty. Beyond value and
//! block gradients an objective can optionally expose exact block minimizers,
//! a Lipschitz constant for the x-block gradient at fixed `y`, and a known
//! lower bound.

use nalgebra::DVector;

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;

/// An iterate `(x, y)`. All entries are finite; the value is immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPoint {
    x: Vector,
    y: Vector,
}

impl BlockPoint {
    pub fn new(x: Vector, y: Vector) -> Result<Self> {
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue("block point".into()));
        }
        Ok(Self { x, y })
    }

    pub fn from_slices(x: &[f64], y: &[f64]) -> Result<Self> {
        Self::new(Vector::from_column_slice(x), Vector::from_column_slice(y))
    }

    pub fn x(&self) -> &Vector {
        &self.x
    }

    pub fn y(&self) -> &Vector {
        &self.y
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.x.len(), self.y.len())
    }

    /// Same `y`, new `x`.
    pub fn with_x(&self, x: Vector) -> Result<Self> {
        Self::new(x, self.y.clone())
    }

    /// Same `x`, new `y`.
    pub fn with_y(&self, y: Vector) -> Result<Self> {
        Self::new(self.x.clone(), y)
    }

    pub fn into_parts(self) -> (Vector, Vector) {
        (self.x, self.y)
    }
}

/// A two-block differentiable objective.
///
/// Implementations must be pure functions of the point: repeated calls with
/// the same input return bit-identical output, and evaluation from several
/// threads at once is allowed.
pub trait Objective: Send + Sync {
    /// `(n_x, n_y)`.
    fn dims(&self) -> (usize, usize);

    fn value(&self, p: &BlockPoint) -> f64;

    fn grad_x(&self, p: &BlockPoint) -> Vector;

    fn grad_y(&self, p: &BlockPoint) -> Vector;

    /// Whether [`Objective::exact_min_y`] is implemented at all.
    fn has_exact_min_y(&self) -> bool {
        false
    }

    /// A minimizer of `f(x, ·)`.
    ///
    /// Returns [`Error::MissingExactMinimizer`] when no oracle exists or the
    /// block system is singular at this `x`.
    fn exact_min_y(&self, _x: &Vector) -> Result<Vector> {
        Err(Error::MissingExactMinimizer)
    }

    fn has_exact_min_x(&self) -> bool {
        false
    }

    /// A minimizer of `f(·, y)`.
    fn exact_min_x(&self, _y: &Vector) -> Result<Vector> {
        Err(Error::MissingExactMinimizer)
    }

    /// Lipschitz constant of `x -> grad_x f(x, y)` at this `y`, if known.
    fn lipschitz_x(&self, _y: &Vector) -> Option<f64> {
        None
    }

    fn lower_bound(&self) -> Option<f64> {
        None
    }

    fn name(&self) -> &str {
        "objective"
    }
}

impl<T: Objective + ?Sized> Objective for &T {
    fn dims(&self) -> (usize, usize) {
        (**self).dims()
    }
    fn value(&self, p: &BlockPoint) -> f64 {
        (**self).value(p)
    }
    fn grad_x(&self, p: &BlockPoint) -> Vector {
        (**self).grad_x(p)
    }
    fn grad_y(&self, p: &BlockPoint) -> Vector {
        (**self).grad_y(p)
    }
    fn has_exact_min_y(&self) -> bool {
        (**self).has_exact_min_y()
    }
    fn exact_min_y(&self, x: &Vector) -> Result<Vector> {
        (**self).exact_min_y(x)
    }
    fn has_exact_min_x(&self) -> bool {
        (**self).has_exact_min_x()
    }
    fn exact_min_x(&self, y: &Vector) -> Result<Vector> {
        (**self).exact_min_x(y)
    }
    fn lipschitz_x(&self, y: &Vector) -> Option<f64> {
        (**self).lipschitz_x(y)
    }
    fn lower_bound(&self) -> Option<f64> {
        (**self).lower_bound()
    }
    fn name(&self) -> &str {
        (**self).name()
    }
}

/// Value and both block gradients at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub grad_x: Vector,
    pub grad_y: Vector,
}

impl Evaluation {
    pub fn grad_x_norm_sq(&self) -> f64 {
        self.grad_x.norm_squared()
    }

    pub fn grad_y_norm(&self) -> f64 {
        self.grad_y.norm()
    }

    /// `‖∇f‖` over both blocks.
    pub fn full_grad_norm(&self) -> f64 {
        (self.grad_x.norm_squared() + self.grad_y.norm_squared()).sqrt()
    }
}

pub(crate) fn check_dims<O: Objective + ?Sized>(obj: &O, p: &BlockPoint) -> Result<()> {
    let (expected_x, expected_y) = obj.dims();
    let (got_x, got_y) = p.dims();
    if (expected_x, expected_y) != (got_x, got_y) {
        return Err(Error::DimensionMismatch {
            expected_x,
            expected_y,
            got_x,
            got_y,
        });
    }
    Ok(())
}

pub(crate) fn finite_value(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteValue(what.to_string()))
    }
}

pub(crate) fn finite_vector(v: Vector, what: &str) -> Result<Vector> {
    if v.iter().all(|e| e.is_finite()) {
        Ok(v)
    } else {
        Err(Error::NonFiniteValue(what.to_string()))
    }
}

/// Value and block gradients from one consistent state.
pub fn evaluate<O: Objective + ?Sized>(obj: &O, p: &BlockPoint) -> Result<Evaluation> {
    check_dims(obj, p)?;
    let value = finite_value(obj.value(p), "objective value")?;
    let grad_x = finite_vector(obj.grad_x(p), "x-block gradient")?;
    let grad_y = finite_vector(obj.grad_y(p), "y-block gradient")?;
    let (n_x, n_y) = obj.dims();
    if grad_x.len() != n_x || grad_y.len() != n_y {
        return Err(Error::DimensionMismatch {
            expected_x: n_x,
            expected_y: n_y,
            got_x: grad_x.len(),
            got_y: grad_y.len(),
        });
    }
    Ok(Evaluation {
        value,
        grad_x,
        grad_y,
    })
}

/// Checked objective value.
pub fn value_at<O: Objective + ?Sized>(obj: &O, p: &BlockPoint) -> Result<f64> {
    check_dims(obj, p)?;
    finite_value(obj.value(p), "objective value")
}

/// Wraps an objective and replaces its x-block Lipschitz oracle with a
/// user-supplied constant.
#[derive(Debug, Clone)]
pub struct DeclaredLipschitz<O> {
    pub inner: O,
    pub lipschitz: f64,
}

impl<O: Objective> Objective for DeclaredLipschitz<O> {
    fn dims(&self) -> (usize, usize) {
        self.inner.dims()
    }
    fn value(&self, p: &BlockPoint) -> f64 {
        self.inner.value(p)
    }
    fn grad_x(&self, p: &BlockPoint) -> Vector {
        self.inner.grad_x(p)
    }
    fn grad_y(&self, p: &BlockPoint) -> Vector {
        self.inner.grad_y(p)
    }
    fn has_exact_min_y(&self) -> bool {
        self.inner.has_exact_min_y()
    }
    fn exact_min_y(&self, x: &Vector) -> Result<Vector> {
        self.inner.exact_min_y(x)
    }
    fn has_exact_min_x(&self) -> bool {
        self.inner.has_exact_min_x()
    }
    fn exact_min_x(&self, y: &Vector) -> Result<Vector> {
        self.inner.exact_min_x(y)
    }
    fn lipschitz_x(&self, _y: &Vector) -> Option<f64> {
        Some(self.lipschitz)
    }
    fn lower_bound(&self) -> Option<f64> {
        self.inner.lower_bound()
    }
    fn name(&self) -> &str {
        self.inner.name()
    }
}
