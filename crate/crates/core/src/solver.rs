//! State, update application and the budgeted run loop shared by both solvers.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::EvalLedger;
use crate::rng::RunStreams;
use crate::trace::{Algorithm, Metrics, RunMeta, RunTrace, TraceRow};

/// Norm beyond which an iterate is treated as diverged.
pub const DIVERGENCE_NORM: f64 = 1e12;

pub const DEFAULT_MAX_ITERATIONS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub x: DVector<f64>,
    pub z: DVector<f64>,
    pub v: DVector<f64>,
    pub k: usize,
    pub ledger: EvalLedger,
}

impl SolverState {
    pub fn new(x: DVector<f64>, z: DVector<f64>, v: DVector<f64>) -> Self {
        Self {
            x,
            z,
            v,
            k: 0,
            ledger: EvalLedger::default(),
        }
    }

    /// `v0 = 0`.
    pub fn with_zero_v(x: DVector<f64>, z: DVector<f64>) -> Self {
        let p = z.len();
        Self::new(x, z, DVector::zeros(p))
    }

    /// All entries finite and every block norm at most [`DIVERGENCE_NORM`].
    pub fn is_sane(&self) -> bool {
        [&self.x, &self.z, &self.v]
            .iter()
            .all(|v| v.iter().all(|e| e.is_finite()) && v.norm() <= DIVERGENCE_NORM)
    }
}

/// The three search directions of one iteration, all evaluated at the old
/// `(z_k, x_k, v_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchDirections {
    pub dz: DVector<f64>,
    pub dv: DVector<f64>,
    pub dx: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    Z,
    V,
    X,
}

pub const DEFAULT_UPDATE_ORDER: [Block; 3] = [Block::Z, Block::V, Block::X];

/// `z -= rho dz`, `v -= rho dv`, `x -= gamma dx`, applied in `order`.
/// Every update reads only `dirs` and its own block, so the order cannot
/// change the result.
pub fn apply_updates(
    state: &SolverState,
    dirs: &SearchDirections,
    rho: f64,
    gamma: f64,
    order: [Block; 3],
) -> SolverState {
    let mut next = state.clone();
    for block in order {
        match block {
            Block::Z => next.z.axpy(-rho, &dirs.dz, 1.0),
            Block::V => next.v.axpy(-rho, &dirs.dv, 1.0),
            Block::X => next.x.axpy(-gamma, &dirs.dx, 1.0),
        }
    }
    next.k = state.k + 1;
    next
}

pub(crate) fn check_divergence(old: &SolverState, next: SolverState) -> Result<SolverState> {
    if next.is_sane() {
        Ok(next)
    } else {
        Err(Error::Divergence {
            k: old.k,
            last_finite: Box::new(old.clone()),
        })
    }
}

/// Execution knobs of a single step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOptions {
    /// Fan function evaluations out to the rayon pool.
    #[serde(default)]
    pub parallel: bool,
    #[serde(default = "default_order")]
    pub update_order: [Block; 3],
}

fn default_order() -> [Block; 3] {
    DEFAULT_UPDATE_ORDER
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            parallel: false,
            update_order: DEFAULT_UPDATE_ORDER,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Maximum number of function evaluations.
    pub budget: u64,
    pub max_iterations: usize,
    /// Log a row every `metric_stride` iterations.
    pub metric_stride: usize,
    /// Record wall-clock time; when off `wall_ns` is always 0.
    pub wall_clock: bool,
    pub step: StepOptions,
}

impl RunOptions {
    pub fn with_budget(budget: u64) -> Self {
        Self {
            budget,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            metric_stride: 1,
            wall_clock: true,
            step: StepOptions::default(),
        }
    }
}

/// Computes per-iteration metrics. Never charged to the evaluation budget.
pub trait MetricsHook {
    fn observe(&mut self, state: &SolverState) -> Result<Metrics>;
}

/// Hook for problems without analytic reference quantities.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoMetrics;

impl MetricsHook for NoMetrics {
    fn observe(&mut self, _: &SolverState) -> Result<Metrics> {
        Ok(Metrics::UNKNOWN)
    }
}

impl<F: FnMut(&SolverState) -> Result<Metrics>> MetricsHook for F {
    fn observe(&mut self, state: &SolverState) -> Result<Metrics> {
        self(state)
    }
}

pub(crate) struct RunSpec<'a> {
    pub algorithm: Algorithm,
    pub params: serde_json::Value,
    pub per_iteration: u64,
    pub seed: u64,
    pub options: &'a RunOptions,
}

/// Iterates `step` until the next iteration would overrun the budget or the
/// iteration cap is reached.
pub(crate) fn drive<F, H>(spec: RunSpec<'_>, init: SolverState, hook: &mut H, mut step: F) -> Result<RunTrace>
where
    F: FnMut(&SolverState, &mut RunStreams) -> Result<SolverState>,
    H: MetricsHook + ?Sized,
{
    let opts = spec.options;
    if opts.budget < spec.per_iteration {
        return Err(Error::EmptyTrace {
            budget: opts.budget,
            per_iteration: spec.per_iteration,
        });
    }
    if opts.metric_stride == 0 {
        return Err(Error::config("metric stride must be >= 1"));
    }
    let meta = RunMeta {
        algorithm: spec.algorithm,
        seed: spec.seed,
        instance_id: None,
        params: spec.params,
    };
    let mut streams = RunStreams::new(spec.seed);
    let mut state = init;
    let mut rows = Vec::new();
    let mut wall_ns: u64 = 0;
    let start_k = state.k;

    while state.k - start_k < opts.max_iterations
        && state.ledger.total() + spec.per_iteration <= opts.budget
    {
        let metrics = if state.k.is_multiple_of(opts.metric_stride) {
            Some(hook.observe(&state)?)
        } else {
            None
        };
        let t0 = opts.wall_clock.then(Instant::now);
        let outcome = step(&state, &mut streams);
        if let Some(t0) = t0 {
            wall_ns += t0.elapsed().as_nanos() as u64;
        }
        match outcome {
            Ok(next) => {
                if let Some(metrics) = metrics {
                    rows.push(TraceRow {
                        k: state.k,
                        evals: next.ledger.total(),
                        wall_ns,
                        metrics,
                        diverged: false,
                    });
                }
                state = next;
            }
            Err(Error::Divergence { .. }) => {
                let metrics = match metrics {
                    Some(m) => m,
                    None => hook.observe(&state)?,
                };
                rows.push(TraceRow {
                    k: state.k,
                    evals: state.ledger.total() + spec.per_iteration,
                    wall_ns,
                    metrics,
                    diverged: true,
                });
                let iterations = state.k - start_k + 1;
                let evaluations = state.ledger.total() + spec.per_iteration;
                return Err(Error::RunDiverged {
                    trace: Box::new(RunTrace {
                        meta,
                        rows,
                        iterations,
                        evaluations,
                        diverged: true,
                        final_metrics: None,
                        final_state: state,
                    }),
                });
            }
            Err(e) => return Err(e),
        }
    }

    let final_metrics = Some(hook.observe(&state)?);
    Ok(RunTrace {
        meta,
        rows,
        iterations: state.k - start_k,
        evaluations: state.ledger.total(),
        diverged: false,
        final_metrics,
        final_state: state,
    })
}
