use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{hvp_from_gradients, AnchorId, EstimatorBatch, ForwardTarget};
use crate::hfzoba::{hbar_from_v, DEFAULT_V_ZERO_THRESHOLD};
use crate::problem::BilevelOracle;
use crate::quadratic::{generate_instance, InstanceSpec};
use crate::rng::{split_seed, RunStreams, Stream, StreamTag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckSettings {
    pub trials: usize,
    /// Allowed deviation of each component mean, in standard errors.
    pub tolerance_se: f64,
    pub h: f64,
    /// Scale of the Hessian-free difference.
    pub h_hat: f64,
    pub b1: usize,
    pub b2: usize,
    pub l1: usize,
    pub l2: usize,
    pub seed: u64,
}

impl CheckSettings {
    pub fn new(trials: usize, seed: u64) -> Self {
        Self {
            trials,
            tolerance_se: 3.0,
            h: 1e-3,
            h_hat: 1e-3,
            b1: 1,
            b2: 1,
            l1: 1,
            l2: 1,
            seed,
        }
    }
}

/// Point at which the estimators are sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckPoint {
    pub z: DVector<f64>,
    pub x: DVector<f64>,
    pub v: DVector<f64>,
}

/// Exact expectations at a [`CheckPoint`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceValues {
    pub inner_grad_z: DVector<f64>,
    pub inner_hess_zz: DMatrix<f64>,
    /// `d x p`.
    pub inner_hess_xz: DMatrix<f64>,
    pub outer_grad_z: DVector<f64>,
    pub outer_grad_x: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorCheck {
    pub name: String,
    pub components: usize,
    /// Largest `|mean - expected| / se` over components; exact matches count 0.
    pub max_dev_se: f64,
    pub max_abs_dev: f64,
    /// Components whose deviation exceeded the tolerance.
    pub failing: Vec<usize>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub trials: usize,
    pub tolerance_se: f64,
    pub checks: Vec<EstimatorCheck>,
    pub pass: bool,
}

impl EstimatorReport {
    pub fn check(&self, name: &str) -> Option<&EstimatorCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Running mean and variance per component.
struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(len: usize) -> Self {
        Self {
            n: 0.0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    fn push(&mut self, sample: &[f64]) {
        self.n += 1.0;
        for ((m, s), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(sample) {
            let delta = x - *m;
            *m += delta / self.n;
            *s += delta * (x - *m);
        }
    }

    fn finish(&self, name: &str, expected: &[f64], tol: f64) -> EstimatorCheck {
        let mut max_dev_se: f64 = 0.0;
        let mut max_abs_dev: f64 = 0.0;
        let mut failing = Vec::new();
        for (i, (&mean, &e)) in self.mean.iter().zip(expected).enumerate() {
            let var = if self.n > 1.0 { self.m2[i] / (self.n - 1.0) } else { 0.0 };
            let se = (var / self.n).sqrt();
            let dev = (mean - e).abs();
            // a zero-variance component must be exact up to roundoff
            let floor = 1e-12 * (1.0 + e.abs());
            let dev_se = if dev <= floor {
                0.0
            } else if se > 0.0 {
                dev / se
            } else {
                f64::INFINITY
            };
            if dev_se.is_nan() || dev_se > tol {
                failing.push(i);
            }
            max_dev_se = max_dev_se.max(dev_se);
            max_abs_dev = max_abs_dev.max(dev);
        }
        EstimatorCheck {
            name: name.to_string(),
            components: expected.len(),
            pass: failing.is_empty(),
            max_dev_se,
            max_abs_dev,
            failing,
        }
    }
}

/// Smallest accepted number of Monte-Carlo trials.
pub const MIN_CHECK_TRIALS: usize = 1000;

pub const ESTIMATOR_NAMES: [&str; 7] = [
    "inner_grad_z_central",
    "outer_grad_z_forward",
    "outer_grad_x_forward",
    "inner_hess_zz",
    "inner_hess_xz",
    "hf_hvp_zz",
    "hf_hvp_xz",
];

/// Monte-Carlo means of every estimator at `point`, compared against
/// `reference` component by component.
pub fn check_estimators_on<O: BilevelOracle>(
    oracle: &O,
    point: &CheckPoint,
    reference: &ReferenceValues,
    settings: &CheckSettings,
) -> Result<EstimatorReport> {
    let (p, d) = (oracle.inner_dim(), oracle.outer_dim());
    if point.z.len() != p || point.x.len() != d || point.v.len() != p {
        return Err(Error::config("check point dimensions do not match the oracle"));
    }
    if settings.trials < MIN_CHECK_TRIALS {
        return Err(Error::config(format!(
            "at least {MIN_CHECK_TRIALS} trials are required, got {}",
            settings.trials
        )));
    }
    let s = settings;
    let mut streams = RunStreams::new(s.seed);
    let hbar = hbar_from_v(s.h_hat, &point.v, DEFAULT_V_ZERO_THRESHOLD);
    let shifted_z = &point.z + &point.v * hbar;

    let sizes = [p, p, d, p * p, d * p, p, d];
    let mut acc: Vec<Welford> = sizes.iter().map(|&n| Welford::new(n)).collect();
    for _ in 0..s.trials {
        let mut batch = EstimatorBatch::draw(
            oracle,
            &mut streams,
            s.b1.max(s.b2),
            s.l1.max(s.l2),
            s.h,
            point.z.clone(),
            point.x.clone(),
        )?;
        let shifted = batch.add_anchor(shifted_z.clone(), point.x.clone());
        let dz = batch.grad_central_inner(s.b1, s.l1)?;
        let fz = batch.grad_forward(ForwardTarget::OuterInZ, AnchorId::BASE, s.b2, s.l2)?;
        let fx = batch.grad_forward(ForwardTarget::OuterInX, AnchorId::BASE, s.b2, s.l2)?;
        let hzz = batch.hess_zz(s.b1, s.l1)?;
        let hxz = batch.hess_xz(s.b1, s.l1)?;
        let gz = batch.grad_forward(ForwardTarget::InnerInZ, AnchorId::BASE, s.b1, s.l1)?;
        let gx = batch.grad_forward(ForwardTarget::InnerInX, AnchorId::BASE, s.b1, s.l1)?;
        let gz_s = batch.grad_forward(ForwardTarget::InnerInZ, shifted, s.b1, s.l1)?;
        let gx_s = batch.grad_forward(ForwardTarget::InnerInX, shifted, s.b1, s.l1)?;
        let hvp_zz = hvp_from_gradients(&gz_s, &gz, hbar)?;
        let hvp_xz = hvp_from_gradients(&gx_s, &gx, hbar)?;

        for (a, sample) in acc.iter_mut().zip([
            dz.as_slice(),
            fz.as_slice(),
            fx.as_slice(),
            hzz.as_slice(),
            hxz.as_slice(),
            hvp_zz.as_slice(),
            hvp_xz.as_slice(),
        ]) {
            a.push(sample);
        }
    }

    let expected_hvp_zz = &reference.inner_hess_zz * &point.v;
    let expected_hvp_xz = &reference.inner_hess_xz * &point.v;
    let expected: [&[f64]; 7] = [
        reference.inner_grad_z.as_slice(),
        reference.outer_grad_z.as_slice(),
        reference.outer_grad_x.as_slice(),
        reference.inner_hess_zz.as_slice(),
        reference.inner_hess_xz.as_slice(),
        expected_hvp_zz.as_slice(),
        expected_hvp_xz.as_slice(),
    ];
    let checks: Vec<EstimatorCheck> = acc
        .iter()
        .zip(ESTIMATOR_NAMES)
        .zip(expected)
        .map(|((a, name), e)| a.finish(name, e, s.tolerance_se))
        .collect();
    Ok(EstimatorReport {
        trials: s.trials,
        tolerance_se: s.tolerance_se,
        pass: checks.iter().all(|c| c.pass),
        checks,
    })
}

/// Estimator check on a generated quadratic instance of dimensions `(p, d)`
/// at a seeded random point.
pub fn check_estimators(p: usize, d: usize, settings: &CheckSettings) -> Result<EstimatorReport> {
    let spec = InstanceSpec {
        p,
        d,
        n: 4 * (p + d).max(5),
        m: 4 * (p + d).max(5),
        seed: split_seed(settings.seed, StreamTag::Instance, 0),
        z_bar: None,
        x_bar: None,
    };
    let inst = generate_instance(&spec)?;
    let mut s = Stream::derive(settings.seed, StreamTag::Check, 0);
    let point = CheckPoint {
        z: DVector::from_fn(p, |_, _| s.uniform_in(-1.0, 1.0)),
        x: DVector::from_fn(d, |_, _| s.uniform_in(-1.0, 1.0)),
        v: DVector::from_fn(p, |_, _| s.uniform_in(-1.0, 1.0)),
    };
    let reference = ReferenceValues {
        inner_grad_z: inst.inner_grad_z(&point.z, &point.x),
        inner_hess_zz: inst.inner_hess_zz(),
        inner_hess_xz: inst.inner_hess_xz(),
        outer_grad_z: inst.outer_grad_z(&point.z, &point.x),
        outer_grad_x: inst.outer_grad_x(&point.z, &point.x),
    };
    check_estimators_on(&inst, &point, &reference, settings)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_exact_zero_variance() {
        let mut w = Welford::new(2);
        for _ in 0..5 {
            w.push(&[1.0, 2.0]);
        }
        assert!(w.finish("c", &[1.0, 2.0], 3.0).pass);
        let bad = w.finish("c", &[1.0, 2.5], 3.0);
        assert!(!bad.pass);
        assert_eq!(bad.failing, vec![1]);
    }

    #[test]
    fn welford_moments() {
        let mut w = Welford::new(1);
        for x in [1.0, 2.0, 3.0, 4.0] {
            w.push(&[x]);
        }
        assert_eq!(w.mean[0], 2.5);
        assert!((w.m2[0] / 3.0 - 5.0 / 3.0).abs() < 1e-15);
    }
}
