#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use zoba::harness::ParamsConfig;
use zoba::{HfZobaParams, QuadraticInstance, StepSchedule, ZobaParams};

/// `A = B = C = D = I_k`, `z_bar = 2`, `x_bar = 1`.
pub fn identity_instance(k: usize) -> QuadraticInstance {
    let i = DMatrix::identity(k, k);
    QuadraticInstance::from_matrices(
        i.clone(),
        i.clone(),
        i.clone(),
        i,
        DVector::from_element(k, 2.0),
        DVector::from_element(k, 1.0),
    )
    .unwrap()
}

pub fn zoba_params(b1: usize, l1: usize, b2: usize, l2: usize) -> ZobaParams {
    ZobaParams {
        gamma: StepSchedule::constant(1e-3),
        rho: StepSchedule::constant(1e-3),
        h: StepSchedule::constant(1e-3),
        b1,
        b2,
        l1,
        l2,
    }
}

pub fn hf_params(b1: usize, l1: usize, b2: usize, l2: usize) -> HfZobaParams {
    HfZobaParams {
        gamma: StepSchedule::constant(1e-3),
        rho: StepSchedule::constant(1e-3),
        h: StepSchedule::constant(1e-3),
        h_hat: StepSchedule::constant(1e-3),
        b1,
        b2,
        l1,
        l2,
        v_zero_threshold: 1e-12,
    }
}

pub fn constant_config(gamma: f64, rho: f64, h: f64, b: usize, l: usize) -> ParamsConfig {
    ParamsConfig {
        gamma: StepSchedule::constant(gamma),
        rho: StepSchedule::constant(rho),
        h: StepSchedule::constant(h),
        h_hat: Some(StepSchedule::constant(h)),
        b1: b,
        b2: b,
        l1: l,
        l2: l,
        v_zero_threshold: 1e-12,
    }
}

pub fn uniform_vec(n: usize, lo: f64, hi: f64, s: &mut zoba::rng::Stream) -> DVector<f64> {
    DVector::from_fn(n, |_, _| s.uniform_in(lo, hi))
}

pub fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
