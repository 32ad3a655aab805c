//! Bundled test problems.
//!
//! * [`TightQuadratic`]: the quadratic model on which the gradient step's
//!   sufficient-decrease bound holds with equality (`n_y = 0`).
//! * [`CoupledQuadratic`]: a convex two-block quadratic with a dense joint
//!   solve as ground truth.
//! * [`MatrixFactorization`]: `½‖A − XY‖²_F`, nonconvex, blocks `X` and `Y`.
//! * [`TwoBlockRosenbrock`]: scalar blocks, no global Lipschitz constant.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{solve_spd, symmetric_eigen_range, symmetric_max_eigenvalue};
use crate::problem::{BlockPoint, Objective, Vector};

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform_vector(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vector {
    Vector::from_fn(n, |_, _| rng.gen_range(lo..hi))
}

fn check_finite(values: impl IntoIterator<Item = f64>, what: &str) -> Result<()> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{what} has non-finite entries"
        )))
    }
}

/// `f(x) = c + gᵀ(x − a) + (L/2)‖x − a‖²` with an empty y block.
#[derive(Debug, Clone, PartialEq)]
pub struct TightQuadratic {
    l_const: f64,
    c_const: f64,
    anchor: Vector,
    g_anchor: Vector,
}

impl TightQuadratic {
    pub fn new(l_const: f64, c_const: f64, anchor: Vec<f64>, g_anchor: Vec<f64>) -> Result<Self> {
        if !(l_const > 0.0 && l_const.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "L must be positive, got {l_const}"
            )));
        }
        if anchor.len() != g_anchor.len() {
            return Err(Error::InvalidDimensions(format!(
                "anchor has {} entries, gradient has {}",
                anchor.len(),
                g_anchor.len()
            )));
        }
        check_finite(
            anchor
                .iter()
                .chain(g_anchor.iter())
                .copied()
                .chain([c_const]),
            "tight quadratic",
        )?;
        Ok(Self {
            l_const,
            c_const,
            anchor: Vector::from_vec(anchor),
            g_anchor: Vector::from_vec(g_anchor),
        })
    }

    pub fn random(n_x: usize, seed: u64) -> Result<Self> {
        if n_x == 0 {
            return Err(Error::InvalidDimensions(
                "tight quadratic needs n_x >= 1".into(),
            ));
        }
        let mut rng = rng_for(seed);
        let l = rng.gen_range(0.5..5.0);
        let c = rng.gen_range(-1.0..1.0);
        let anchor = uniform_vector(&mut rng, n_x, -1.0, 1.0);
        let g = uniform_vector(&mut rng, n_x, -2.0, 2.0);
        Self::new(l, c, anchor.as_slice().to_vec(), g.as_slice().to_vec())
    }

    pub fn l_const(&self) -> f64 {
        self.l_const
    }

    pub fn anchor(&self) -> &Vector {
        &self.anchor
    }

    pub fn g_anchor(&self) -> &Vector {
        &self.g_anchor
    }

    /// `a − g/L`.
    pub fn vertex(&self) -> Vector {
        &self.anchor - &self.g_anchor / self.l_const
    }
}

impl Objective for TightQuadratic {
    fn dims(&self) -> (usize, usize) {
        (self.anchor.len(), 0)
    }

    fn value(&self, p: &BlockPoint) -> f64 {
        let d = p.x() - &self.anchor;
        self.c_const + self.g_anchor.dot(&d) + 0.5 * self.l_const * d.norm_squared()
    }

    fn grad_x(&self, p: &BlockPoint) -> Vector {
        &self.g_anchor + (p.x() - &self.anchor) * self.l_const
    }

    fn grad_y(&self, _p: &BlockPoint) -> Vector {
        Vector::zeros(0)
    }

    fn has_exact_min_y(&self) -> bool {
        true
    }

    fn exact_min_y(&self, _x: &Vector) -> Result<Vector> {
        Ok(Vector::zeros(0))
    }

    fn has_exact_min_x(&self) -> bool {
        true
    }

    fn exact_min_x(&self, _y: &Vector) -> Result<Vector> {
        Ok(self.vertex())
    }

    fn lipschitz_x(&self, _y: &Vector) -> Option<f64> {
        Some(self.l_const)
    }

    fn lower_bound(&self) -> Option<f64> {
        Some(self.c_const - self.g_anchor.norm_squared() / (2.0 * self.l_const))
    }

    fn name(&self) -> &str {
        "tight_quadratic"
    }
}

/// `f = ½xᵀAx + xᵀBy + ½yᵀCy + aᵀx + cᵀy` with `A` PSD and `C` PD.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledQuadratic {
    a_mat: DMatrix<f64>,
    b_mat: DMatrix<f64>,
    c_mat: DMatrix<f64>,
    a_lin: Vector,
    c_lin: Vector,
    l_x: f64,
}

impl CoupledQuadratic {
    pub fn new(
        a_mat: DMatrix<f64>,
        b_mat: DMatrix<f64>,
        c_mat: DMatrix<f64>,
        a_lin: Vector,
        c_lin: Vector,
    ) -> Result<Self> {
        let n_x = a_mat.nrows();
        let n_y = c_mat.nrows();
        let shapes_ok = a_mat.is_square()
            && c_mat.is_square()
            && b_mat.shape() == (n_x, n_y)
            && a_lin.len() == n_x
            && c_lin.len() == n_y;
        if !shapes_ok {
            return Err(Error::InvalidDimensions(format!(
                "A {:?}, B {:?}, C {:?}, a {}, c {}",
                a_mat.shape(),
                b_mat.shape(),
                c_mat.shape(),
                a_lin.len(),
                c_lin.len()
            )));
        }
        check_finite(
            a_mat
                .iter()
                .chain(b_mat.iter())
                .chain(c_mat.iter())
                .chain(a_lin.iter())
                .chain(c_lin.iter())
                .copied(),
            "coupled quadratic",
        )?;
        let sym_tol = 1e-12;
        if (&a_mat - a_mat.transpose()).amax() > sym_tol * a_mat.amax().max(1.0)
            || (&c_mat - c_mat.transpose()).amax() > sym_tol * c_mat.amax().max(1.0)
        {
            return Err(Error::InvalidParameter("A and C must be symmetric".into()));
        }
        let (a_min, a_max) = symmetric_eigen_range(&a_mat);
        if a_min < -1e-12 * a_max.abs().max(1.0) {
            return Err(Error::InvalidParameter(
                "A must be positive semidefinite".into(),
            ));
        }
        if n_y > 0 {
            let (c_min, c_max) = symmetric_eigen_range(&c_mat);
            if !(c_min > 1e-12 * c_max) {
                return Err(Error::InvalidParameter(
                    "C must be positive definite".into(),
                ));
            }
        }
        Ok(Self {
            l_x: a_max.max(0.0),
            a_mat,
            b_mat,
            c_mat,
            a_lin,
            c_lin,
        })
    }

    /// One-dimensional blocks.
    pub fn scalar(a: f64, b: f64, c: f64, a_lin: f64, c_lin: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, c),
            Vector::from_element(1, a_lin),
            Vector::from_element(1, c_lin),
        )
    }

    /// A random instance whose joint Hessian is strictly diagonally dominant
    /// with margin 1, hence positive definite with smallest eigenvalue ≥ 1.
    pub fn random(n_x: usize, n_y: usize, seed: u64) -> Result<Self> {
        if n_x == 0 || n_y == 0 {
            return Err(Error::InvalidDimensions(format!(
                "coupled quadratic needs n_x, n_y >= 1, got ({n_x}, {n_y})"
            )));
        }
        let n = n_x + n_y;
        let mut rng = rng_for(seed);
        let mut h = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = rng.gen_range(-1.0..1.0);
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        for i in 0..n {
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| h[(i, j)].abs()).sum();
            h[(i, i)] = off + 1.0 + rng.gen_range(0.0..1.0);
        }
        let a_lin = uniform_vector(&mut rng, n_x, -1.0, 1.0);
        let c_lin = uniform_vector(&mut rng, n_y, -1.0, 1.0);
        Self::new(
            h.view((0, 0), (n_x, n_x)).into_owned(),
            h.view((0, n_x), (n_x, n_y)).into_owned(),
            h.view((n_x, n_x), (n_y, n_y)).into_owned(),
            a_lin,
            c_lin,
        )
    }

    pub fn joint_hessian(&self) -> DMatrix<f64> {
        let (n_x, n_y) = self.dims();
        let mut h = DMatrix::zeros(n_x + n_y, n_x + n_y);
        h.view_mut((0, 0), (n_x, n_x)).copy_from(&self.a_mat);
        h.view_mut((0, n_x), (n_x, n_y)).copy_from(&self.b_mat);
        h.view_mut((n_x, 0), (n_y, n_x))
            .copy_from(&self.b_mat.transpose());
        h.view_mut((n_x, n_x), (n_y, n_y)).copy_from(&self.c_mat);
        h
    }

    /// Lipschitz constant of the full gradient, `λ_max` of the joint Hessian.
    pub fn joint_lipschitz(&self) -> f64 {
        symmetric_max_eigenvalue(&self.joint_hessian())
    }
}

impl Objective for CoupledQuadratic {
    fn dims(&self) -> (usize, usize) {
        (self.a_mat.nrows(), self.c_mat.nrows())
    }

    fn value(&self, p: &BlockPoint) -> f64 {
        let (x, y) = (p.x(), p.y());
        0.5 * x.dot(&(&self.a_mat * x))
            + x.dot(&(&self.b_mat * y))
            + 0.5 * y.dot(&(&self.c_mat * y))
            + self.a_lin.dot(x)
            + self.c_lin.dot(y)
    }

    fn grad_x(&self, p: &BlockPoint) -> Vector {
        &self.a_mat * p.x() + &self.b_mat * p.y() + &self.a_lin
    }

    fn grad_y(&self, p: &BlockPoint) -> Vector {
        self.b_mat.tr_mul(p.x()) + &self.c_mat * p.y() + &self.c_lin
    }

    fn has_exact_min_y(&self) -> bool {
        true
    }

    fn exact_min_y(&self, x: &Vector) -> Result<Vector> {
        let rhs = -(self.b_mat.tr_mul(x) + &self.c_lin);
        let rhs = DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice());
        solve_spd(&self.c_mat, &rhs)
            .map(|z| Vector::from_column_slice(z.as_slice()))
            .map_err(|_| Error::MissingExactMinimizer)
    }

    fn has_exact_min_x(&self) -> bool {
        true
    }

    fn exact_min_x(&self, y: &Vector) -> Result<Vector> {
        let rhs = -(&self.b_mat * y + &self.a_lin);
        let rhs = DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice());
        solve_spd(&self.a_mat, &rhs)
            .map(|z| Vector::from_column_slice(z.as_slice()))
            .map_err(|_| Error::MissingExactMinimizer)
    }

    fn lipschitz_x(&self, _y: &Vector) -> Option<f64> {
        Some(self.l_x)
    }

    fn lower_bound(&self) -> Option<f64> {
        joint_solve_oracle(self).ok().map(|p| self.value(&p))
    }

    fn name(&self) -> &str {
        "coupled_quadratic"
    }
}

/// Brute-force minimizer of a positive definite [`CoupledQuadratic`]: solves
/// `[[A, B], [Bᵀ, C]] (x, y) = −(a, c)` by a dense Cholesky factorization.
pub fn joint_solve_oracle(p: &CoupledQuadratic) -> Result<BlockPoint> {
    let (n_x, n_y) = p.dims();
    let h = p.joint_hessian();
    let mut rhs = DMatrix::zeros(n_x + n_y, 1);
    for i in 0..n_x {
        rhs[(i, 0)] = -p.a_lin[i];
    }
    for j in 0..n_y {
        rhs[(n_x + j, 0)] = -p.c_lin[j];
    }
    let z = solve_spd(&h, &rhs)?;
    BlockPoint::from_slices(&z.as_slice()[..n_x], &z.as_slice()[n_x..])
}

/// `½‖A − XY‖²_F` with `x = vec(X)` (m×r) and `y = vec(Y)` (r×n), both
/// stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFactorization {
    target: DMatrix<f64>,
    rank: usize,
}

impl MatrixFactorization {
    pub fn new(target: DMatrix<f64>, rank: usize) -> Result<Self> {
        if rank == 0 || target.nrows() == 0 || target.ncols() == 0 {
            return Err(Error::InvalidDimensions(format!(
                "target {:?} with rank {rank}",
                target.shape()
            )));
        }
        check_finite(target.iter().copied(), "factorization target")?;
        Ok(Self { target, rank })
    }

    pub fn random(m: usize, n: usize, rank: usize, seed: u64) -> Result<Self> {
        let mut rng = rng_for(seed);
        let target = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
        Self::new(target, rank)
    }

    pub fn target(&self) -> &DMatrix<f64> {
        &self.target
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn x_matrix(&self, x: &Vector) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.target.nrows(), self.rank, x.as_slice())
    }

    pub fn y_matrix(&self, y: &Vector) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.rank, self.target.ncols(), y.as_slice())
    }

    fn residual(&self, p: &BlockPoint) -> DMatrix<f64> {
        self.x_matrix(p.x()) * self.y_matrix(p.y()) - &self.target
    }
}

fn flatten(m: DMatrix<f64>) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

impl Objective for MatrixFactorization {
    fn dims(&self) -> (usize, usize) {
        (
            self.target.nrows() * self.rank,
            self.rank * self.target.ncols(),
        )
    }

    fn value(&self, p: &BlockPoint) -> f64 {
        0.5 * self.residual(p).norm_squared()
    }

    fn grad_x(&self, p: &BlockPoint) -> Vector {
        flatten(self.residual(p) * self.y_matrix(p.y()).transpose())
    }

    fn grad_y(&self, p: &BlockPoint) -> Vector {
        flatten(self.x_matrix(p.x()).tr_mul(&self.residual(p)))
    }

    fn has_exact_min_y(&self) -> bool {
        true
    }

    /// `Y = (XᵀX)⁻¹ XᵀA`; singular `XᵀX` is an error, never a pseudo-inverse.
    fn exact_min_y(&self, x: &Vector) -> Result<Vector> {
        let xm = self.x_matrix(x);
        let gram = xm.tr_mul(&xm);
        let rhs = xm.tr_mul(&self.target);
        solve_spd(&gram, &rhs)
            .map(flatten)
            .map_err(|_| Error::MissingExactMinimizer)
    }

    fn has_exact_min_x(&self) -> bool {
        true
    }

    /// `X = A Yᵀ (YYᵀ)⁻¹`.
    fn exact_min_x(&self, y: &Vector) -> Result<Vector> {
        let ym = self.y_matrix(y);
        let gram = &ym * ym.transpose();
        let rhs = &ym * self.target.transpose();
        solve_spd(&gram, &rhs)
            .map(|xt| flatten(xt.transpose()))
            .map_err(|_| Error::MissingExactMinimizer)
    }

    /// `λ_max(YYᵀ)`.
    fn lipschitz_x(&self, y: &Vector) -> Option<f64> {
        let ym = self.y_matrix(y);
        Some(symmetric_max_eigenvalue(&(&ym * ym.transpose())).max(0.0))
    }

    fn lower_bound(&self) -> Option<f64> {
        Some(0.0)
    }

    fn name(&self) -> &str {
        "matrix_factorization"
    }
}

/// `f(x, y) = (1 − x)² + s·(y − x²)²` on scalar blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoBlockRosenbrock {
    scale: f64,
}

impl TwoBlockRosenbrock {
    pub fn new(scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "scale must be positive, got {scale}"
            )));
        }
        Ok(Self { scale })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

impl Default for TwoBlockRosenbrock {
    fn default() -> Self {
        Self { scale: 100.0 }
    }
}

impl Objective for TwoBlockRosenbrock {
    fn dims(&self) -> (usize, usize) {
        (1, 1)
    }

    fn value(&self, p: &BlockPoint) -> f64 {
        let (x, y) = (p.x()[0], p.y()[0]);
        (1.0 - x).powi(2) + self.scale * (y - x * x).powi(2)
    }

    fn grad_x(&self, p: &BlockPoint) -> Vector {
        let (x, y) = (p.x()[0], p.y()[0]);
        Vector::from_element(1, -2.0 * (1.0 - x) - 4.0 * self.scale * x * (y - x * x))
    }

    fn grad_y(&self, p: &BlockPoint) -> Vector {
        let (x, y) = (p.x()[0], p.y()[0]);
        Vector::from_element(1, 2.0 * self.scale * (y - x * x))
    }

    fn has_exact_min_y(&self) -> bool {
        true
    }

    fn exact_min_y(&self, x: &Vector) -> Result<Vector> {
        Ok(Vector::from_element(1, x[0] * x[0]))
    }

    fn lower_bound(&self) -> Option<f64> {
        Some(0.0)
    }

    fn name(&self) -> &str {
        "two_block_rosenbrock"
    }
}

/// Any bundled problem.
#[derive(Debug, Clone, PartialEq)]
pub enum Problem {
    TightQuadratic(TightQuadratic),
    CoupledQuadratic(CoupledQuadratic),
    MatrixFactorization(MatrixFactorization),
    TwoBlockRosenbrock(TwoBlockRosenbrock),
}

impl Problem {
    fn inner(&self) -> &dyn Objective {
        match self {
            Problem::TightQuadratic(p) => p,
            Problem::CoupledQuadratic(p) => p,
            Problem::MatrixFactorization(p) => p,
            Problem::TwoBlockRosenbrock(p) => p,
        }
    }

    /// A seeded starting point typical for the family. The y block is not
    /// yet stationary; the solver takes care of that.
    pub fn random_start(&self, seed: u64) -> BlockPoint {
        let mut rng = rng_for(seed ^ 0x5eed_5eed_5eed_5eed);
        let (n_x, n_y) = self.dims();
        let (x, y) = match self {
            Problem::TightQuadratic(q) => (
                q.anchor() + uniform_vector(&mut rng, n_x, -2.0, 2.0),
                Vector::zeros(0),
            ),
            Problem::MatrixFactorization(_) => (
                uniform_vector(&mut rng, n_x, -1.0, 1.0),
                uniform_vector(&mut rng, n_y, -1.0, 1.0),
            ),
            Problem::CoupledQuadratic(_) | Problem::TwoBlockRosenbrock(_) => (
                uniform_vector(&mut rng, n_x, -2.0, 2.0),
                uniform_vector(&mut rng, n_y, -2.0, 2.0),
            ),
        };
        BlockPoint::new(x, y).expect("uniform samples are finite")
    }
}

impl Objective for Problem {
    fn dims(&self) -> (usize, usize) {
        self.inner().dims()
    }
    fn value(&self, p: &BlockPoint) -> f64 {
        self.inner().value(p)
    }
    fn grad_x(&self, p: &BlockPoint) -> Vector {
        self.inner().grad_x(p)
    }
    fn grad_y(&self, p: &BlockPoint) -> Vector {
        self.inner().grad_y(p)
    }
    fn has_exact_min_y(&self) -> bool {
        self.inner().has_exact_min_y()
    }
    fn exact_min_y(&self, x: &Vector) -> Result<Vector> {
        self.inner().exact_min_y(x)
    }
    fn has_exact_min_x(&self) -> bool {
        self.inner().has_exact_min_x()
    }
    fn exact_min_x(&self, y: &Vector) -> Result<Vector> {
        self.inner().exact_min_x(y)
    }
    fn lipschitz_x(&self, y: &Vector) -> Option<f64> {
        self.inner().lipschitz_x(y)
    }
    fn lower_bound(&self) -> Option<f64> {
        self.inner().lower_bound()
    }
    fn name(&self) -> &str {
        self.inner().name()
    }
}

fn default_seed() -> u64 {
    0
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TightQuadraticSpec {
    pub l: Option<f64>,
    pub c: Option<f64>,
    pub anchor: Option<Vec<f64>>,
    pub g: Option<Vec<f64>>,
    pub n_x: Option<usize>,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoupledQuadraticSpec {
    /// Row-major matrices; when `a`, `b` and `c` are all present the
    /// instance is explicit, otherwise it is drawn from `seed`.
    pub a: Option<Vec<Vec<f64>>>,
    pub b: Option<Vec<Vec<f64>>>,
    pub c: Option<Vec<Vec<f64>>>,
    pub a_lin: Option<Vec<f64>>,
    pub c_lin: Option<Vec<f64>>,
    pub n_x: Option<usize>,
    pub n_y: Option<usize>,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixFactorizationSpec {
    pub target: Option<Vec<Vec<f64>>>,
    pub m: Option<usize>,
    pub n: Option<usize>,
    pub rank: Option<usize>,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosenbrockSpec {
    pub scale: Option<f64>,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

/// A bundled family plus its parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ProblemSpec {
    TightQuadratic(TightQuadraticSpec),
    CoupledQuadratic(CoupledQuadraticSpec),
    MatrixFactorization(MatrixFactorizationSpec),
    TwoBlockRosenbrock(RosenbrockSpec),
}

pub const FAMILIES: [&str; 4] = [
    "tight_quadratic",
    "coupled_quadratic",
    "matrix_factorization",
    "two_block_rosenbrock",
];

impl ProblemSpec {
    /// Parses a table of the form `{ family = "...", <params> }`. Unknown
    /// families and unknown parameter keys are errors.
    pub fn from_table(table: &toml::Table) -> std::result::Result<Self, String> {
        let family = match table.get("family") {
            Some(toml::Value::String(s)) => s.clone(),
            Some(_) => return Err("`family` must be a string".into()),
            None => return Err("missing key `family`".into()),
        };
        let mut params = table.clone();
        params.remove("family");
        let params = toml::Value::Table(params);
        let parsed = match family.as_str() {
            "tight_quadratic" => params.try_into().map(ProblemSpec::TightQuadratic),
            "coupled_quadratic" => params.try_into().map(ProblemSpec::CoupledQuadratic),
            "matrix_factorization" => params.try_into().map(ProblemSpec::MatrixFactorization),
            "two_block_rosenbrock" => params.try_into().map(ProblemSpec::TwoBlockRosenbrock),
            other => return Err(Error::UnknownFamily(other.to_string()).to_string()),
        };
        parsed.map_err(|e| format!("[problem] ({family}): {}", e.message()))
    }

    pub fn family(&self) -> &'static str {
        match self {
            ProblemSpec::TightQuadratic(_) => FAMILIES[0],
            ProblemSpec::CoupledQuadratic(_) => FAMILIES[1],
            ProblemSpec::MatrixFactorization(_) => FAMILIES[2],
            ProblemSpec::TwoBlockRosenbrock(_) => FAMILIES[3],
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ProblemSpec::TightQuadratic(s) => s.seed,
            ProblemSpec::CoupledQuadratic(s) => s.seed,
            ProblemSpec::MatrixFactorization(s) => s.seed,
            ProblemSpec::TwoBlockRosenbrock(s) => s.seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self {
            ProblemSpec::TightQuadratic(s) => s.seed = seed,
            ProblemSpec::CoupledQuadratic(s) => s.seed = seed,
            ProblemSpec::MatrixFactorization(s) => s.seed = seed,
            ProblemSpec::TwoBlockRosenbrock(s) => s.seed = seed,
        }
        self
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidDimensions(format!("{what}: ragged rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

/// Builds a deterministic instance from a spec: same spec, same oracle.
pub fn make_problem(spec: &ProblemSpec) -> Result<Problem> {
    match spec {
        ProblemSpec::TightQuadratic(s) => {
            let q = match (&s.anchor, &s.g) {
                (Some(anchor), Some(g)) => {
                    let l = s.l.ok_or_else(|| {
                        Error::InvalidParameter("explicit tight quadratic needs `l`".into())
                    })?;
                    TightQuadratic::new(l, s.c.unwrap_or(0.0), anchor.clone(), g.clone())?
                }
                (None, None) => {
                    let mut q = TightQuadratic::random(s.n_x.unwrap_or(3), s.seed)?;
                    if let Some(l) = s.l {
                        q = TightQuadratic::new(
                            l,
                            s.c.unwrap_or(q.c_const),
                            q.anchor.as_slice().to_vec(),
                            q.g_anchor.as_slice().to_vec(),
                        )?;
                    }
                    q
                }
                _ => {
                    return Err(Error::InvalidParameter(
                        "tight quadratic needs both `anchor` and `g`, or neither".into(),
                    ))
                }
            };
            Ok(Problem::TightQuadratic(q))
        }
        ProblemSpec::CoupledQuadratic(s) => {
            let q = match (&s.a, &s.b, &s.c) {
                (Some(a), Some(b), Some(c)) => {
                    let a = matrix_from_rows(a, "A")?;
                    let b = matrix_from_rows(b, "B")?;
                    let c = matrix_from_rows(c, "C")?;
                    let a_lin = s
                        .a_lin
                        .clone()
                        .map_or_else(|| Vector::zeros(a.nrows()), Vector::from_vec);
                    let c_lin = s
                        .c_lin
                        .clone()
                        .map_or_else(|| Vector::zeros(c.nrows()), Vector::from_vec);
                    CoupledQuadratic::new(a, b, c, a_lin, c_lin)?
                }
                (None, None, None) => {
                    if s.a_lin.is_some() || s.c_lin.is_some() {
                        return Err(Error::InvalidParameter(
                            "linear terms need explicit matrices".into(),
                        ));
                    }
                    CoupledQuadratic::random(s.n_x.unwrap_or(5), s.n_y.unwrap_or(3), s.seed)?
                }
                _ => {
                    return Err(Error::InvalidParameter(
                        "coupled quadratic needs all of `a`, `b`, `c`, or none".into(),
                    ))
                }
            };
            Ok(Problem::CoupledQuadratic(q))
        }
        ProblemSpec::MatrixFactorization(s) => {
            let rank = s.rank.unwrap_or(2);
            let mf = match &s.target {
                Some(rows) => MatrixFactorization::new(matrix_from_rows(rows, "target")?, rank)?,
                None => {
                    MatrixFactorization::random(s.m.unwrap_or(6), s.n.unwrap_or(5), rank, s.seed)?
                }
            };
            Ok(Problem::MatrixFactorization(mf))
        }
        ProblemSpec::TwoBlockRosenbrock(s) => Ok(Problem::TwoBlockRosenbrock(
            TwoBlockRosenbrock::new(s.scale.unwrap_or(100.0))?,
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{fd_check_gradients, probe_lipschitz_x, Region, DEFAULT_FD_STEP};

    fn bundled(seed: u64) -> Vec<Problem> {
        vec![
            Problem::TightQuadratic(TightQuadratic::random(3, seed).unwrap()),
            Problem::CoupledQuadratic(CoupledQuadratic::random(4, 3, seed).unwrap()),
            Problem::MatrixFactorization(MatrixFactorization::random(5, 4, 2, seed).unwrap()),
            Problem::TwoBlockRosenbrock(TwoBlockRosenbrock::default()),
        ]
    }

    #[test]
    fn tight_quadratic_from_spec() {
        let spec = ProblemSpec::TightQuadratic(TightQuadraticSpec {
            l: Some(4.0),
            c: Some(2.0),
            anchor: Some(vec![1.0]),
            g: Some(vec![4.0]),
            ..Default::default()
        });
        let p = make_problem(&spec).unwrap();
        assert_eq!(p.value(&BlockPoint::from_slices(&[1.0], &[]).unwrap()), 2.0);
        assert_eq!(p.value(&BlockPoint::from_slices(&[0.0], &[]).unwrap()), 0.0);
        assert_eq!(p.lipschitz_x(&Vector::zeros(0)), Some(4.0));
        assert_eq!(p.dims(), (1, 0));
    }

    #[test]
    fn coupled_random_is_positive_definite_and_deterministic() {
        let spec = ProblemSpec::CoupledQuadratic(CoupledQuadraticSpec {
            n_x: Some(5),
            n_y: Some(3),
            seed: 7,
            ..Default::default()
        });
        let a = make_problem(&spec).unwrap();
        let b = make_problem(&spec).unwrap();
        assert_eq!(a, b);
        let Problem::CoupledQuadratic(q) = a else {
            panic!()
        };
        assert!(q.joint_hessian().cholesky().is_some());
        assert_eq!(q.dims(), (5, 3));
    }

    #[test]
    fn factorization_identity_is_exact() {
        let spec = ProblemSpec::MatrixFactorization(MatrixFactorizationSpec {
            target: Some(vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
            rank: Some(2),
            ..Default::default()
        });
        let p = make_problem(&spec).unwrap();
        let eye = [1.0, 0.0, 0.0, 1.0];
        assert_eq!(p.value(&BlockPoint::from_slices(&eye, &eye).unwrap()), 0.0);
    }

    #[test]
    fn joint_solve_examples() {
        let q = CoupledQuadratic::scalar(1.0, 1.0, 2.0, 0.0, 0.0).unwrap();
        let p = joint_solve_oracle(&q).unwrap();
        assert_eq!((p.x()[0], p.y()[0]), (0.0, 0.0));

        let q = CoupledQuadratic::scalar(1.0, 1.0, 2.0, -1.0, 0.0).unwrap();
        let p = joint_solve_oracle(&q).unwrap();
        assert!((p.x()[0] - 2.0).abs() < 1e-14 && (p.y()[0] + 1.0).abs() < 1e-14);

        let q = CoupledQuadratic::random(5, 3, 42).unwrap();
        let p = joint_solve_oracle(&q).unwrap();
        let g = (q.grad_x(&p).norm_squared() + q.grad_y(&p).norm_squared()).sqrt();
        assert!(g <= 1e-10, "{g}");
    }

    #[test]
    fn joint_solve_rejects_singular() {
        // Joint Hessian [[1, 1], [1, 1]] is singular.
        let q = CoupledQuadratic::scalar(1.0, 1.0, 1.0, 0.0, 0.0).unwrap();
        assert_eq!(joint_solve_oracle(&q), Err(Error::SingularSystem));
    }

    #[test]
    fn exact_min_x_singular_gram() {
        let mf = MatrixFactorization::random(4, 3, 2, 1).unwrap();
        // Y with two identical rows: YYᵀ singular.
        let y = Vector::from_column_slice(&[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        assert_eq!(mf.exact_min_x(&y), Err(Error::MissingExactMinimizer));
        let x = Vector::from_column_slice(&[1.0, 2.0, 3.0, 4.0, 2.0, 4.0, 6.0, 8.0]);
        assert_eq!(mf.exact_min_y(&x), Err(Error::MissingExactMinimizer));
    }

    #[test]
    fn unknown_family_and_keys_are_errors() {
        let t: toml::Table = toml::from_str("family = \"banana\"").unwrap();
        assert!(ProblemSpec::from_table(&t)
            .unwrap_err()
            .contains("unknown problem family"));
        let t: toml::Table =
            toml::from_str("family = \"two_block_rosenbrock\"\nscal = 3.0").unwrap();
        assert!(ProblemSpec::from_table(&t).is_err());
        let t: toml::Table =
            toml::from_str("family = \"two_block_rosenbrock\"\nscale = 3.0").unwrap();
        assert_eq!(
            ProblemSpec::from_table(&t).unwrap(),
            ProblemSpec::TwoBlockRosenbrock(RosenbrockSpec {
                scale: Some(3.0),
                seed: 0
            })
        );
    }

    #[test]
    fn invalid_dimensions() {
        assert!(matches!(
            CoupledQuadratic::random(0, 3, 1),
            Err(Error::InvalidDimensions(_))
        ));
        assert!(matches!(
            MatrixFactorization::random(3, 3, 0, 1),
            Err(Error::InvalidDimensions(_))
        ));
    }

    #[test]
    fn gradient_consistency_all_problems() {
        for seed in 0..3 {
            for p in bundled(seed) {
                for k in 0..20 {
                    let pt = p.random_start(seed * 100 + k);
                    let r = fd_check_gradients(&p, &pt, DEFAULT_FD_STEP).unwrap();
                    assert!(r.passes(1e-6), "{} {r:?}", p.name());
                }
            }
        }
    }

    #[test]
    fn minimizer_consistency_all_problems() {
        for seed in 0..3 {
            for p in bundled(seed) {
                for k in 0..10 {
                    let pt = p.random_start(seed * 100 + k);
                    if p.has_exact_min_y() {
                        let y = p.exact_min_y(pt.x()).unwrap();
                        let g = p.grad_y(&pt.with_y(y).unwrap()).norm();
                        assert!(g <= 1e-10, "{} grad_y {g}", p.name());
                    }
                    if p.has_exact_min_x() {
                        let x = p.exact_min_x(pt.y()).unwrap();
                        let g = p.grad_x(&pt.with_x(x).unwrap()).norm();
                        assert!(g <= 1e-10, "{} grad_x {g}", p.name());
                    }
                }
            }
        }
    }

    #[test]
    fn lipschitz_consistency_all_problems() {
        for seed in 0..3 {
            for p in bundled(seed) {
                let pt = p.random_start(seed);
                let Some(l) = p.lipschitz_x(pt.y()) else {
                    assert_eq!(p.name(), "two_block_rosenbrock");
                    continue;
                };
                let region = Region::around(pt.x(), 2.0);
                let probe = probe_lipschitz_x(&p, pt.y(), &region, 100, seed).unwrap();
                assert!(
                    probe <= l * (1.0 + 1e-6),
                    "{} probe {probe} > {l}",
                    p.name()
                );
            }
        }
    }

    #[test]
    fn oracles_are_bitwise_deterministic() {
        for p in bundled(5) {
            let pt = p.random_start(3);
            assert_eq!(p.value(&pt).to_bits(), p.value(&pt).to_bits());
            assert_eq!(p.grad_x(&pt), p.grad_x(&pt));
        }
    }
}
