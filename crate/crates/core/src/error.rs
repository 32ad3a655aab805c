use thiserror::Error;

/// Errors raised by oracles, update strategies, the certificate and the solver.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(
        "dimension mismatch: expected (n_x={expected_x}, n_y={expected_y}), got ({got_x}, {got_y})"
    )]
    DimensionMismatch {
        expected_x: usize,
        expected_y: usize,
        got_x: usize,
        got_y: usize,
    },

    #[error("non-finite value in {0}")]
    NonFiniteValue(String),

    #[error("objective declares no Lipschitz constant for the x block")]
    MissingLipschitzOracle,

    #[error("exact block minimizer unavailable (no oracle, or the block system is singular)")]
    MissingExactMinimizer,

    #[error("sufficient decrease violated: decrease {decrease:e} < required {required:e} with L = {lipschitz}")]
    SufficientDecreaseViolated {
        decrease: f64,
        required: f64,
        lipschitz: f64,
    },

    #[error("backtracking exhausted after {rejects} rejections (last estimate {last_estimate:e})")]
    BacktrackExhausted { rejects: usize, last_estimate: f64 },

    #[error(
        "inner y-block solve stopped after {iters} iterations with residual {residual:e} > {tol:e}"
    )]
    InnerSolveFailed {
        iters: usize,
        residual: f64,
        tol: f64,
    },

    #[error("record out of order: expected t = {expected}, got t = {got}")]
    OutOfOrderRecord { expected: usize, got: usize },

    #[error("certificate has no iterations")]
    EmptyHistory,

    #[error("rate fit needs at least {needed} records, got {got}")]
    InsufficientHistory { needed: usize, got: usize },

    #[error("gradient norm reached exactly zero; the run converged and no rate can be fitted")]
    DegenerateFit,

    #[error("probe region has zero volume")]
    DegenerateRegion,

    #[error("power iteration did not converge in {iters} iterations")]
    NoConvergence { iters: usize },

    #[error("linear system is singular or not positive definite")]
    SingularSystem,

    #[error("unknown problem family `{0}`")]
    UnknownFamily(String),

    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl Error {
    /// The variant name, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::NonFiniteValue(_) => "NonFiniteValue",
            Error::MissingLipschitzOracle => "MissingLipschitzOracle",
            Error::MissingExactMinimizer => "MissingExactMinimizer",
            Error::SufficientDecreaseViolated { .. } => "SufficientDecreaseViolated",
            Error::BacktrackExhausted { .. } => "BacktrackExhausted",
            Error::InnerSolveFailed { .. } => "InnerSolveFailed",
            Error::OutOfOrderRecord { .. } => "OutOfOrderRecord",
            Error::EmptyHistory => "EmptyHistory",
            Error::InsufficientHistory { .. } => "InsufficientHistory",
            Error::DegenerateFit => "DegenerateFit",
            Error::DegenerateRegion => "DegenerateRegion",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::SingularSystem => "SingularSystem",
            Error::UnknownFamily(_) => "UnknownFamily",
            Error::InvalidDimensions(_) => "InvalidDimensions",
            Error::InvalidParameter(_) => "InvalidParameter",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
