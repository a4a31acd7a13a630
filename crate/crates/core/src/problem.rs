//! Black-box bilevel problem abstraction, evaluation ledger, and schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Which objective an evaluation touches: the inner `g` or the outer `f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Level {
    Inner,
    Outer,
}

/// Stochastic zeroth-order access to a bilevel problem
///
/// ```text
/// min_x  F(z*(x), x) = E_zeta[f(z*(x), x, zeta)]
/// s.t.   z*(x) = argmin_z G(z, x) = E_xi[g(z, x, xi)]
/// ```
///
/// Only values of `g` and `f` are observable. Noise tokens are opaque to the
/// solvers: the oracle samples them and later receives them back. Evaluation
/// must be a pure function of `(z, x, noise)`.
pub trait BilevelOracle: Sync {
    type Noise: Copy + Send + Sync + std::fmt::Debug;

    /// Dimension `p` of the inner variable `z`.
    fn inner_dim(&self) -> usize;
    /// Dimension `d` of the outer variable `x`.
    fn outer_dim(&self) -> usize;

    fn eval_inner(&self, z: &[f64], x: &[f64], noise: Self::Noise) -> f64;
    fn eval_outer(&self, z: &[f64], x: &[f64], noise: Self::Noise) -> f64;

    fn sample_inner_noise(&self, stream: &mut Stream) -> Self::Noise;
    fn sample_outer_noise(&self, stream: &mut Stream) -> Self::Noise;

    fn eval(&self, level: Level, z: &[f64], x: &[f64], noise: Self::Noise) -> f64 {
        match level {
            Level::Inner => self.eval_inner(z, x, noise),
            Level::Outer => self.eval_outer(z, x, noise),
        }
    }
}

/// Noise-free oracle built from two closures.
pub struct FnOracle<G, F> {
    p: usize,
    d: usize,
    g: G,
    f: F,
}

impl<G, F> FnOracle<G, F>
where
    G: Fn(&[f64], &[f64]) -> f64 + Sync,
    F: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    pub fn new(p: usize, d: usize, g: G, f: F) -> Self {
        Self { p, d, g, f }
    }
}

impl<G, F> BilevelOracle for FnOracle<G, F>
where
    G: Fn(&[f64], &[f64]) -> f64 + Sync,
    F: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    type Noise = ();

    fn inner_dim(&self) -> usize {
        self.p
    }

    fn outer_dim(&self) -> usize {
        self.d
    }

    fn eval_inner(&self, z: &[f64], x: &[f64], _: ()) -> f64 {
        (self.g)(z, x)
    }

    fn eval_outer(&self, z: &[f64], x: &[f64], _: ()) -> f64 {
        (self.f)(z, x)
    }

    fn sample_inner_noise(&self, _: &mut Stream) {}

    fn sample_outer_noise(&self, _: &mut Stream) {}
}

/// Running count of function evaluations charged to a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalLedger {
    pub count_g: u64,
    pub count_f: u64,
    /// Evaluations recorded since the last [`EvalLedger::start_iteration`].
    pub per_iteration_last: u64,
}

impl EvalLedger {
    pub fn record(&mut self, level: Level, n: u64) {
        match level {
            Level::Inner => self.count_g += n,
            Level::Outer => self.count_f += n,
        }
        self.per_iteration_last += n;
    }

    pub fn start_iteration(&mut self) {
        self.per_iteration_last = 0;
    }

    pub fn total(&self) -> u64 {
        self.count_g + self.count_f
    }
}

/// Step-size or discretization schedule indexed by iteration `k >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepSchedule {
    Constant { base: f64 },
    /// `base * (k + 1)^(-exponent)`
    PowerDecay { base: f64, exponent: f64 },
}

impl StepSchedule {
    pub fn constant(base: f64) -> Self {
        StepSchedule::Constant { base }
    }

    pub fn power_decay(base: f64, exponent: f64) -> Self {
        StepSchedule::PowerDecay { base, exponent }
    }

    pub fn base(&self) -> f64 {
        match *self {
            StepSchedule::Constant { base } | StepSchedule::PowerDecay { base, .. } => base,
        }
    }

    /// Decay exponent; zero for constant schedules.
    pub fn exponent(&self) -> f64 {
        match *self {
            StepSchedule::Constant { .. } => 0.0,
            StepSchedule::PowerDecay { exponent, .. } => exponent,
        }
    }

    pub fn with_base(self, base: f64) -> Self {
        match self {
            StepSchedule::Constant { .. } => StepSchedule::Constant { base },
            StepSchedule::PowerDecay { exponent, .. } => StepSchedule::PowerDecay { base, exponent },
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let base = self.base();
        if !(base.is_finite() && base > 0.0) {
            return Err(Error::config(format!(
                "schedule `{name}` needs a positive finite base, got {base}"
            )));
        }
        if !self.exponent().is_finite() {
            return Err(Error::config(format!("schedule `{name}` has a non-finite exponent")));
        }
        Ok(())
    }

    /// Value at iteration `k`. Callers validate once up front.
    pub fn at(&self, k: usize) -> f64 {
        match *self {
            StepSchedule::Constant { base } => base,
            StepSchedule::PowerDecay { base, exponent } => base * ((k + 1) as f64).powf(-exponent),
        }
    }
}

/// Checked schedule evaluation.
pub fn schedule_value(schedule: &StepSchedule, k: usize) -> Result<f64> {
    schedule.validate("schedule")?;
    Ok(schedule.at(k))
}
