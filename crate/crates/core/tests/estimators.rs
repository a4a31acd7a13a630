mod common;

use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use zoba::estimators::{hvp_forward, AnchorId, DirectionPool, EstimatorBatch, ForwardTarget};
use zoba::harness::{check_estimators, check_estimators_on, CheckPoint, CheckSettings, ReferenceValues};
use zoba::rng::{Stream, StreamTag};
use zoba::{generate_instance, BilevelOracle, FnOracle, InstanceSpec};

use common::{dvec, uniform_vec};

fn small_instance(seed: u64) -> zoba::QuadraticInstance {
    generate_instance(&InstanceSpec {
        p: 5,
        d: 4,
        n: 30,
        m: 30,
        seed,
        z_bar: None,
        x_bar: None,
    })
    .unwrap()
}

/// Gradient in `z` of the single row `0.5 (A_j z - B_j x - a_j)^2`.
fn row_grad_z(inst: &zoba::QuadraticInstance, j: usize, z: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
    let [a, b, _, _] = inst.matrices();
    let (off, _) = inst.offsets();
    let r = (a.row(j) * z)[0] - (b.row(j) * x)[0] - off[j];
    a.row(j).transpose() * r
}

#[test]
fn central_difference_is_exact_on_quadratic_rows() {
    let inst = small_instance(3);
    let mut s = Stream::derive(3, StreamTag::Check, 0);
    for j in [0, 7, 29] {
        let z = uniform_vec(5, -5.0, 10.0, &mut s);
        let x = uniform_vec(4, -5.0, 10.0, &mut s);
        let w = uniform_vec(5, -2.0, 2.0, &mut s);
        let pool = DirectionPool::from_rows(1, 1, 5, 4, w.as_slice().to_vec(), vec![0.0; 4]).unwrap();
        let mut batch = EstimatorBatch::with_samples(&inst, pool, vec![j], vec![0], 1e-3, z.clone(), x.clone()).unwrap();
        let dz = batch.grad_central_inner(1, 1).unwrap();
        let expected = &w * w.transpose() * row_grad_z(&inst, j, &z, &x);
        assert_abs_diff_eq!(dz, expected, epsilon = 1e-8);
    }
}

#[test]
fn hvp_with_analytic_gradients_is_exact() {
    let inst = small_instance(4);
    let mut s = Stream::derive(4, StreamTag::Check, 0);
    let z = uniform_vec(5, -5.0, 10.0, &mut s);
    let x = uniform_vec(4, -5.0, 10.0, &mut s);
    let v = uniform_vec(5, -1.0, 1.0, &mut s);
    let hbar = 1e-3 / v.norm();
    let hzz = hvp_forward(|z, x| Ok(inst.inner_grad_z(z, x)), &z, &x, &v, hbar).unwrap();
    assert_abs_diff_eq!(hzz, inst.inner_hess_zz() * &v, epsilon = 1e-8);
    let hxz = hvp_forward(|z, x| Ok(inst.inner_grad_x(z, x)), &z, &x, &v, hbar).unwrap();
    assert_abs_diff_eq!(hxz, inst.inner_hess_xz() * &v, epsilon = 1e-8);
}

#[test]
fn zero_target_means_are_exactly_zero() {
    let o = FnOracle::new(3, 2, |_, _| 0.0, |_, _| 0.0);
    let point = CheckPoint {
        z: dvec(&[1.0, -2.0, 0.5]),
        x: dvec(&[0.3, 0.7]),
        v: dvec(&[0.1, 0.0, -0.4]),
    };
    let reference = ReferenceValues {
        inner_grad_z: DVector::zeros(3),
        inner_hess_zz: DMatrix::zeros(3, 3),
        inner_hess_xz: DMatrix::zeros(2, 3),
        outer_grad_z: DVector::zeros(3),
        outer_grad_x: DVector::zeros(2),
    };
    let report = check_estimators_on(&o, &point, &reference, &CheckSettings::new(1000, 1)).unwrap();
    assert!(report.pass);
    assert_eq!(report.checks.len(), 7);
    for c in &report.checks {
        assert_eq!(c.max_dev_se, 0.0, "{}", c.name);
        assert_eq!(c.max_abs_dev, 0.0, "{}", c.name);
    }
}

#[test]
fn forward_difference_bias_on_cubic_is_detected() {
    // At z = 0 the forward difference of sum z_i^3 has mean 3 h^2 per
    // component while the gradient is 0.
    let o = FnOracle::new(3, 2, |_, _| 0.0, |z, _| z.iter().map(|t| t * t * t).sum());
    let point = CheckPoint {
        z: DVector::zeros(3),
        x: DVector::zeros(2),
        v: dvec(&[1.0, 0.0, 0.0]),
    };
    let reference = ReferenceValues {
        inner_grad_z: DVector::zeros(3),
        inner_hess_zz: DMatrix::zeros(3, 3),
        inner_hess_xz: DMatrix::zeros(2, 3),
        outer_grad_z: DVector::zeros(3),
        outer_grad_x: DVector::zeros(2),
    };
    let mut settings = CheckSettings::new(20_000, 2);
    settings.h = 0.3;
    let report = check_estimators_on(&o, &point, &reference, &settings).unwrap();
    assert!(!report.pass);
    let biased = report.check("outer_grad_z_forward").unwrap();
    assert!(!biased.pass);
    assert!(biased.max_dev_se > 10.0);
    assert_eq!(biased.failing, vec![0, 1, 2]);
    assert!(report.checks.iter().filter(|c| c.name != "outer_grad_z_forward").all(|c| c.pass));
}

#[test]
fn monte_carlo_means_match_on_small_quadratic() {
    let report = check_estimators(3, 2, &CheckSettings::new(20_000, 11)).unwrap();
    for c in &report.checks {
        assert!(c.pass, "{} deviates by {} SE", c.name, c.max_dev_se);
    }
}

#[test]
fn too_few_trials_is_rejected() {
    assert!(check_estimators(3, 2, &CheckSettings::new(999, 0)).is_err());
}

#[test]
fn forward_surrogate_shares_pool_across_anchors() {
    // On a linear target the forward surrogate is w w^T grad at every anchor,
    // so the HF difference vanishes exactly.
    let o = FnOracle::new(2, 1, |z, x| 3.0 * z[0] - z[1] + 2.0 * x[0], |_, _| 0.0);
    let pool = DirectionPool::from_rows(1, 2, 2, 1, vec![0.5, -1.0, 2.0, 0.25], vec![1.0, -0.5]).unwrap();
    let mut batch = EstimatorBatch::with_samples(&o, pool, vec![()], vec![()], 1e-2, dvec(&[1.0, 1.0]), dvec(&[0.0])).unwrap();
    let shifted = batch.add_anchor(dvec(&[1.5, 0.0]), dvec(&[0.0]));
    let base = batch.grad_forward(ForwardTarget::InnerInZ, AnchorId::BASE, 1, 2).unwrap();
    let moved = batch.grad_forward(ForwardTarget::InnerInZ, shifted, 1, 2).unwrap();
    assert_abs_diff_eq!(base, moved, epsilon = 1e-12);
    assert_eq!(batch.fresh_evaluations(zoba::Level::Inner), 6);
    assert_eq!(o.inner_dim(), 2);
}
