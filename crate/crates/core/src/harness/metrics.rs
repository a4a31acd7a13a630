use crate::error::{Error, Result};
use crate::quadratic::QuadraticInstance;
use crate::solver::{MetricsHook, SolverState};
use crate::trace::Metrics;

/// `(psi_k - min_psi) / (psi_0 - min_psi)`.
pub fn normalized_gap(psi_k: f64, psi_0: f64, min_psi: f64) -> Result<f64> {
    let denom = psi_0 - min_psi;
    if denom.is_nan() || denom <= 0.0 {
        return Err(Error::DegenerateStart(denom));
    }
    Ok((psi_k - min_psi) / denom)
}

/// Metrics from the analytic oracles of a quadratic instance. The first
/// observed iterate fixes `psi_0`.
pub struct BenchmarkMetrics<'a> {
    instance: &'a QuadraticInstance,
    psi_0: Option<f64>,
}

impl<'a> BenchmarkMetrics<'a> {
    pub fn new(instance: &'a QuadraticInstance) -> Self {
        Self { instance, psi_0: None }
    }
}

impl MetricsHook for BenchmarkMetrics<'_> {
    fn observe(&mut self, state: &SolverState) -> Result<Metrics> {
        let inst = self.instance;
        let (psi, grad) = inst.psi_and_grad(&state.x);
        let min = inst.min_psi();
        let psi_0 = *self.psi_0.get_or_insert(psi);
        Ok(Metrics {
            psi,
            psi_gap: psi - min,
            norm_gap: normalized_gap(psi, psi_0, min)?,
            grad_psi_norm: grad.norm(),
            z_err: (&state.z - inst.z_star(&state.x)).norm(),
            v_err: (&state.v - inst.v_star(&state.x)).norm(),
        })
    }
}
