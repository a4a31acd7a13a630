//! ZOBA: single-loop zeroth-order bilevel iteration with explicit Hessian
//! surrogates and evaluation reuse across the three search directions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{AnchorId, EstimatorBatch, ForwardTarget};
use crate::problem::{BilevelOracle, Level, StepSchedule};
use crate::rng::RunStreams;
use crate::solver::{
    apply_updates, check_divergence, drive, MetricsHook, RunOptions, RunSpec, SearchDirections,
    SolverState, StepOptions,
};
use crate::trace::{Algorithm, RunTrace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZobaParams {
    /// Outer step size.
    pub gamma: StepSchedule,
    /// Step size of the auxiliary `z` and `v` sequences.
    pub rho: StepSchedule,
    /// Finite-difference discretization.
    pub h: StepSchedule,
    pub b1: usize,
    pub b2: usize,
    pub l1: usize,
    pub l2: usize,
}

impl ZobaParams {
    pub fn validate(&self) -> Result<()> {
        self.gamma.validate("gamma")?;
        self.rho.validate("rho")?;
        self.h.validate("h")?;
        validate_sizes(self.b1, self.b2, self.l1, self.l2)
    }

    pub fn per_iteration(&self) -> u64 {
        fe_per_iteration_zoba(self.b1, self.l1, self.b2, self.l2)
    }
}

pub(crate) fn validate_sizes(b1: usize, b2: usize, l1: usize, l2: usize) -> Result<()> {
    if b1 == 0 || b2 == 0 || l1 == 0 || l2 == 0 {
        return Err(Error::config(format!(
            "batch sizes and direction counts must be >= 1 (b1={b1}, b2={b2}, l1={l1}, l2={l2})"
        )));
    }
    Ok(())
}

/// Fresh evaluations per ZOBA iteration: `b1 (4 l1 + 1) + b2 (2 l2 + 1)`.
pub fn fe_per_iteration_zoba(b1: usize, l1: usize, b2: usize, l2: usize) -> u64 {
    (b1 * (4 * l1 + 1) + b2 * (2 * l2 + 1)) as u64
}

/// Search directions at `state` plus the fresh `(g, f)` evaluation counts.
pub fn zoba_directions<O: BilevelOracle>(
    state: &SolverState,
    oracle: &O,
    params: &ZobaParams,
    streams: &mut RunStreams,
    opts: &StepOptions,
) -> Result<(SearchDirections, u64, u64)> {
    let k = state.k;
    let (b1, b2, l1, l2) = (params.b1, params.b2, params.l1, params.l2);
    let mut batch = EstimatorBatch::draw(
        oracle,
        streams,
        b1.max(b2),
        l1.max(l2),
        params.h.at(k),
        state.z.clone(),
        state.x.clone(),
    )?
    .parallel(opts.parallel);

    let dz = batch.grad_central_inner(b1, l1)?;
    let hzz = batch.hess_zz(b1, l1)?;
    let fz = batch.grad_forward(ForwardTarget::OuterInZ, AnchorId::BASE, b2, l2)?;
    let hxz = batch.hess_xz(b1, l1)?;
    let fx = batch.grad_forward(ForwardTarget::OuterInX, AnchorId::BASE, b2, l2)?;

    let dv = &hzz * &state.v + fz;
    let dx = &hxz * &state.v + fx;
    Ok((
        SearchDirections { dz, dv, dx },
        batch.fresh_evaluations(Level::Inner),
        batch.fresh_evaluations(Level::Outer),
    ))
}

/// One iteration: all three directions from the same `(z_k, x_k, v_k)`,
/// then the parallel update.
pub fn zoba_step<O: BilevelOracle>(
    state: &SolverState,
    oracle: &O,
    params: &ZobaParams,
    streams: &mut RunStreams,
    opts: &StepOptions,
) -> Result<SolverState> {
    let (dirs, fresh_g, fresh_f) = zoba_directions(state, oracle, params, streams, opts)?;
    let mut next = apply_updates(
        state,
        &dirs,
        params.rho.at(state.k),
        params.gamma.at(state.k),
        opts.update_order,
    );
    next.ledger.start_iteration();
    next.ledger.record(Level::Inner, fresh_g);
    next.ledger.record(Level::Outer, fresh_f);
    check_divergence(state, next)
}

/// Runs ZOBA from `init` until the evaluation budget or iteration cap.
pub fn zoba_run<O, H>(
    oracle: &O,
    params: &ZobaParams,
    init: SolverState,
    seed: u64,
    options: &RunOptions,
    hook: &mut H,
) -> Result<RunTrace>
where
    O: BilevelOracle,
    H: MetricsHook + ?Sized,
{
    params.validate()?;
    check_dims(oracle, &init)?;
    let spec = RunSpec {
        algorithm: Algorithm::Zoba,
        params: serde_json::to_value(params).expect("params serialize"),
        per_iteration: params.per_iteration(),
        seed,
        options,
    };
    drive(spec, init, hook, |state, streams| {
        zoba_step(state, oracle, params, streams, &options.step)
    })
}

pub(crate) fn check_dims<O: BilevelOracle>(oracle: &O, init: &SolverState) -> Result<()> {
    let (p, d) = (oracle.inner_dim(), oracle.outer_dim());
    if init.x.len() != d || init.z.len() != p || init.v.len() != p {
        return Err(Error::config(format!(
            "initial point has dims (x={}, z={}, v={}), oracle expects (d={d}, p={p})",
            init.x.len(),
            init.z.len(),
            init.v.len()
        )));
    }
    if !init.is_sane() {
        return Err(Error::config("initial point is not finite"));
    }
    Ok(())
}
