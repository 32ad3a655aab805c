//! Two-block coordinate descent with a runtime convergence certificate.
//!
//! The solver alternates an exact stationarity solve in the `y` block with a
//! certified sufficient-decrease update in the `x` block, and checks along the
//! way that the per-step decrease inequality, its telescoped sum and the
//! resulting `O(1/√T)` bound on the smallest gradient norm actually hold.

// `!(a > b)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certificate;
pub mod cli;
pub mod error;
pub mod numerics;
pub mod problem;
pub mod problems;
pub mod solver;
pub mod strategies;
pub mod trace;

pub use certificate::{check_step, fit_rate, Certificate, IterationRecord};
pub use error::{Error, Result};
pub use problem::{evaluate, BlockPoint, Objective, Vector};
pub use problems::{make_problem, Problem, ProblemSpec};
pub use solver::{solve, solve_gd_baseline, RunFailure, RunResult, SolverConfig, StopReason};
pub use strategies::{BacktrackParams, XStrategy};
