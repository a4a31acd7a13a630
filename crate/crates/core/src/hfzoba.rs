//! HF-ZOBA: the Hessian-free variant. Hessian-vector products are first-order
//! differences of forward-difference gradient surrogates taken at `z_k` and
//! at `z_k + hbar_k v_k`, sharing one direction pool and one noise batch.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::estimators::{hvp_from_gradients, AnchorId, EstimatorBatch, ForwardTarget};
use crate::problem::{BilevelOracle, Level, StepSchedule};
use crate::rng::RunStreams;
use crate::solver::{
    apply_updates, check_divergence, drive, MetricsHook, RunOptions, RunSpec, SearchDirections,
    SolverState, StepOptions,
};
use crate::trace::{Algorithm, RunTrace};
use crate::zoba::{check_dims, validate_sizes};

pub const DEFAULT_V_ZERO_THRESHOLD: f64 = 1e-12;

fn default_threshold() -> f64 {
    DEFAULT_V_ZERO_THRESHOLD
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HfZobaParams {
    pub gamma: StepSchedule,
    pub rho: StepSchedule,
    /// Discretization of the gradient surrogates.
    pub h: StepSchedule,
    /// Scale of the Hessian-vector difference; the actual step is
    /// `h_hat / |v|` (see [`hbar_from_v`]).
    pub h_hat: StepSchedule,
    pub b1: usize,
    pub b2: usize,
    pub l1: usize,
    pub l2: usize,
    /// `|v|` at or below this is treated as zero.
    #[serde(default = "default_threshold")]
    pub v_zero_threshold: f64,
}

impl HfZobaParams {
    /// Validates and returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        self.gamma.validate("gamma")?;
        self.rho.validate("rho")?;
        self.h.validate("h")?;
        self.h_hat.validate("h_hat")?;
        validate_sizes(self.b1, self.b2, self.l1, self.l2)?;
        if !(self.v_zero_threshold.is_finite() && self.v_zero_threshold > 0.0) {
            return Err(crate::Error::config("v_zero_threshold must be positive"));
        }
        let mut warnings = Vec::new();
        if self.h.exponent() < self.h_hat.exponent() {
            warnings.push(format!(
                "h decays slower than h_hat (exponents {} < {}); asymptotic convergence needs h to decay at least as fast",
                self.h.exponent(),
                self.h_hat.exponent()
            ));
        }
        Ok(warnings)
    }

    pub fn per_iteration(&self) -> u64 {
        fe_per_iteration_hfzoba(self.b1, self.l1, self.b2, self.l2)
    }
}

/// Fresh evaluations per HF-ZOBA iteration: `2 b1 (2 l1 + 1) + b2 (2 l2 + 1)`.
pub fn fe_per_iteration_hfzoba(b1: usize, l1: usize, b2: usize, l2: usize) -> u64 {
    (2 * b1 * (2 * l1 + 1) + b2 * (2 * l2 + 1)) as u64
}

/// `h_hat / |v|` when `|v| > threshold`, otherwise `h_hat`.
pub fn hbar_from_v(h_hat: f64, v: &nalgebra::DVector<f64>, threshold: f64) -> f64 {
    let norm = v.norm();
    if norm > threshold {
        h_hat / norm
    } else {
        h_hat
    }
}

pub fn hfzoba_directions<O: BilevelOracle>(
    state: &SolverState,
    oracle: &O,
    params: &HfZobaParams,
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

    let hbar = hbar_from_v(params.h_hat.at(k), &state.v, params.v_zero_threshold);
    let shifted = batch.add_anchor(&state.z + &state.v * hbar, state.x.clone());

    let gz = batch.grad_forward(ForwardTarget::InnerInZ, AnchorId::BASE, b1, l1)?;
    let gx = batch.grad_forward(ForwardTarget::InnerInX, AnchorId::BASE, b1, l1)?;
    let gz_shift = batch.grad_forward(ForwardTarget::InnerInZ, shifted, b1, l1)?;
    let gx_shift = batch.grad_forward(ForwardTarget::InnerInX, shifted, b1, l1)?;
    let fz = batch.grad_forward(ForwardTarget::OuterInZ, AnchorId::BASE, b2, l2)?;
    let fx = batch.grad_forward(ForwardTarget::OuterInX, AnchorId::BASE, b2, l2)?;

    let hzz = hvp_from_gradients(&gz_shift, &gz, hbar)?;
    let hxz = hvp_from_gradients(&gx_shift, &gx, hbar)?;
    Ok((
        SearchDirections {
            dz: gz,
            dv: hzz + fz,
            dx: hxz + fx,
        },
        batch.fresh_evaluations(Level::Inner),
        batch.fresh_evaluations(Level::Outer),
    ))
}

pub fn hfzoba_step<O: BilevelOracle>(
    state: &SolverState,
    oracle: &O,
    params: &HfZobaParams,
    streams: &mut RunStreams,
    opts: &StepOptions,
) -> Result<SolverState> {
    let (dirs, fresh_g, fresh_f) = hfzoba_directions(state, oracle, params, streams, opts)?;
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

pub fn hfzoba_run<O, H>(
    oracle: &O,
    params: &HfZobaParams,
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
        algorithm: Algorithm::HfZoba,
        params: serde_json::to_value(params).expect("params serialize"),
        per_iteration: params.per_iteration(),
        seed,
        options,
    };
    drive(spec, init, hook, |state, streams| {
        hfzoba_step(state, oracle, params, streams, &options.step)
    })
}
