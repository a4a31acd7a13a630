//! Zeroth-order solvers for stochastic bilevel problems
//! `min_x f(z*(x), x)` with `z*(x) = argmin_z g(z, x)`, using only noisy
//! function values of `g` and `f`.
//!
//! Two algorithms are provided: [`zoba_run`] estimates gradients and
//! Hessian blocks by Gaussian smoothing, [`hfzoba_run`] replaces the Hessian
//! blocks by differences of gradient surrogates. [`quadratic`] holds the
//! benchmark family with closed-form hyper-gradients and [`harness`] the
//! experiment tooling around it.

pub mod error;
pub mod estimators;
pub mod harness;
pub mod hfzoba;
pub mod problem;
pub mod quadratic;
pub mod rng;
pub mod solver;
pub mod trace;
pub mod zoba;

pub use error::{Error, Result};
pub use hfzoba::{fe_per_iteration_hfzoba, hfzoba_run, hfzoba_step, HfZobaParams};
pub use problem::{BilevelOracle, EvalLedger, FnOracle, Level, StepSchedule};
pub use quadratic::{generate_instance, InstanceSpec, QuadraticInstance};
pub use solver::{MetricsHook, NoMetrics, RunOptions, SolverState, StepOptions};
pub use trace::{Algorithm, Metrics, RunTrace, TraceRow};
pub use zoba::{fe_per_iteration_zoba, zoba_run, zoba_step, ZobaParams};
