//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use zoba::estimators::{hvp_forward, DirectionPool, EstimatorBatch};
use zoba::harness::{
    check_estimators, grid_search, run_repeat, BenchmarkMetrics, CheckSettings, ExperimentConfig, GridSpec,
    ParamsConfig,
};
use zoba::rng::{RunStreams, Stream, StreamTag};
use zoba::solver::{Block, StepOptions};
use zoba::trace::to_csv_string;
use zoba::{
    generate_instance, hfzoba_run, hfzoba_step, zoba_run, zoba_step, Algorithm, HfZobaParams, InstanceSpec,
    QuadraticInstance, RunOptions, SolverState, StepSchedule, ZobaParams,
};

type Criterion = (&'static str, Option<Duration>, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn uniform(n: usize, lo: f64, hi: f64, s: &mut Stream) -> DVector<f64> {
    DVector::from_fn(n, |_, _| s.uniform_in(lo, hi))
}

fn desk_instance(seed: u64) -> InstanceSpec {
    InstanceSpec::desk(seed)
}

fn schedule_params(gamma: StepSchedule, rho: StepSchedule, h: StepSchedule, h_hat: StepSchedule, b: usize, l: usize) -> ParamsConfig {
    ParamsConfig {
        gamma,
        rho,
        h,
        h_hat: Some(h_hat),
        b1: b,
        b2: b,
        l1: l,
        l2: l,
        v_zero_threshold: 1e-12,
    }
}

fn experiment(algorithm: Algorithm, params: ParamsConfig, master_seed: u64, repeats: usize) -> ExperimentConfig {
    ExperimentConfig {
        algorithm,
        instance: desk_instance(7),
        params,
        budget: 200_000,
        max_iterations: 1_000_000,
        repeats,
        master_seed,
        init_box: [-5.0, 10.0],
        output_dir: std::env::temp_dir(),
        metric_stride: 1,
        wall_clock: false,
        discard_first: false,
        parallel_repeats: true,
        step: StepOptions::default(),
        grid: None,
    }
}

fn fe_exactness() -> Outcome {
    const SIZES: [usize; 4] = [1, 2, 5, 10];
    let inst = generate_instance(&InstanceSpec {
        p: 5,
        d: 5,
        n: 40,
        m: 40,
        seed: 1,
        z_bar: None,
        x_bar: None,
    })
    .unwrap();
    let mut s = Stream::derive(1, StreamTag::Check, 0);
    let state = SolverState::new(uniform(5, -5.0, 10.0, &mut s), uniform(5, -5.0, 10.0, &mut s), uniform(5, -1.0, 1.0, &mut s));
    let opts = StepOptions::default();
    let mut mismatches = Vec::new();
    let mut combos = 0;
    for (i, &b1) in SIZES.iter().enumerate() {
        for (j, &l1) in SIZES.iter().enumerate() {
            let (b2, l2) = (SIZES[(i + 1) % 4], SIZES[(j + 2) % 4]);
            combos += 1;
            let zp = ZobaParams {
                gamma: StepSchedule::constant(1e-6),
                rho: StepSchedule::constant(1e-6),
                h: StepSchedule::constant(1e-3),
                b1,
                b2,
                l1,
                l2,
            };
            let hp = HfZobaParams {
                gamma: zp.gamma,
                rho: zp.rho,
                h: zp.h,
                h_hat: zp.h,
                b1,
                b2,
                l1,
                l2,
                v_zero_threshold: 1e-12,
            };
            let zoba_expected = (b1 * (4 * l1 + 1) + b2 * (2 * l2 + 1)) as u64;
            let hf_expected = (2 * b1 * (2 * l1 + 1) + b2 * (2 * l2 + 1)) as u64;
            let mut streams = RunStreams::new(combos);
            let mut st = state.clone();
            let mut hst = state.clone();
            for _ in 0..2 {
                let before = st.ledger.total();
                st = zoba_step(&st, &inst, &zp, &mut streams, &opts).unwrap();
                if st.ledger.total() - before != zoba_expected {
                    mismatches.push(format!("zoba {:?}", (b1, l1, b2, l2)));
                }
                let before = hst.ledger.total();
                hst = hfzoba_step(&hst, &inst, &hp, &mut streams, &opts).unwrap();
                if hst.ledger.total() - before != hf_expected {
                    mismatches.push(format!("hfzoba {:?}", (b1, l1, b2, l2)));
                }
            }
        }
    }
    outcome(mismatches.is_empty(), format!("{combos} combinations, mismatches: {mismatches:?}"))
}

fn unbiasedness() -> Outcome {
    let mut settings = CheckSettings::new(100_000, 2024);
    settings.h = 1e-3;
    settings.h_hat = 1e-3;
    settings.tolerance_se = 3.0;
    let report = check_estimators(5, 5, &settings).unwrap();
    let worst = report
        .checks
        .iter()
        .map(|c| format!("{}={:.2}", c.name, c.max_dev_se))
        .collect::<Vec<_>>()
        .join(" ");
    outcome(report.pass, format!("max |dev|/SE per estimator: {worst}"))
}

fn quadratic_exactness() -> Outcome {
    let inst = generate_instance(&InstanceSpec {
        p: 5,
        d: 5,
        n: 50,
        m: 50,
        seed: 3,
        z_bar: None,
        x_bar: None,
    })
    .unwrap();
    let [a, b, _, _] = inst.matrices();
    let (off, _) = inst.offsets();
    let mut s = Stream::derive(3, StreamTag::Check, 0);
    let mut worst_cd: f64 = 0.0;
    let mut worst_hvp: f64 = 0.0;
    for trial in 0..20 {
        let j = trial % 50;
        let z = uniform(5, -5.0, 10.0, &mut s);
        let x = uniform(5, -5.0, 10.0, &mut s);
        let w = uniform(5, -2.0, 2.0, &mut s);
        let v = uniform(5, -1.0, 1.0, &mut s);
        let pool = DirectionPool::from_rows(1, 1, 5, 5, w.as_slice().to_vec(), vec![0.0; 5]).unwrap();
        let mut batch = EstimatorBatch::with_samples(&inst, pool, vec![j], vec![0], 1e-3, z.clone(), x.clone()).unwrap();
        let dz = batch.grad_central_inner(1, 1).unwrap();
        let r = (a.row(j) * &z)[0] - (b.row(j) * &x)[0] - off[j];
        let row_grad = a.row(j).transpose() * r;
        worst_cd = worst_cd.max((dz - &w * w.transpose() * row_grad).amax());

        let hbar = 1e-3 / v.norm();
        let hv = hvp_forward(|z, x| Ok(inst.inner_grad_z(z, x)), &z, &x, &v, hbar).unwrap();
        worst_hvp = worst_hvp.max((hv - inst.inner_hess_zz() * &v).amax());
    }
    outcome(
        worst_cd <= 1e-8 && worst_hvp <= 1e-8,
        format!("central difference err {worst_cd:.2e}, hvp err {worst_hvp:.2e} (tol 1e-8)"),
    )
}

fn oracle_consistency() -> Outcome {
    let mut worst_inner: f64 = 0.0;
    let mut worst_adjoint: f64 = 0.0;
    let mut worst_fd: f64 = 0.0;
    let mut worst_min: f64 = 0.0;
    for seed in 0..20 {
        let inst = generate_instance(&desk_instance(1000 + seed)).unwrap();
        let mut s = Stream::derive(seed, StreamTag::Check, 0);
        for _ in 0..100 {
            let x = uniform(10, -5.0, 10.0, &mut s);
            let z = inst.z_star(&x);
            worst_inner = worst_inner.max(inst.inner_grad_z(&z, &x).norm());
            let v = inst.v_star(&x);
            worst_adjoint = worst_adjoint.max((inst.inner_hess_zz() * &v + inst.outer_grad_z(&z, &x)).norm());
            let (_, g) = inst.psi_and_grad(&x);
            let step = 1e-5;
            let fd = DVector::from_fn(10, |i, _| {
                let (mut hi, mut lo) = (x.clone(), x.clone());
                hi[i] += step;
                lo[i] -= step;
                (inst.psi(&hi) - inst.psi(&lo)) / (2.0 * step)
            });
            worst_fd = worst_fd.max((fd - &g).norm() / g.norm());
        }
        let (psi, grad) = inst.psi_and_grad(inst.x_bar());
        worst_min = worst_min.max(grad.norm()).max(psi.abs());
    }
    let pass = worst_inner <= 1e-8 && worst_adjoint <= 1e-8 && worst_fd <= 1e-4 && worst_min <= 1e-8;
    outcome(
        pass,
        format!(
            "inner grad {worst_inner:.2e}, adjoint residual {worst_adjoint:.2e}, fd rel {worst_fd:.2e}, at x_bar {worst_min:.2e}"
        ),
    )
}

/// Grid search on 6 shared initializations, then 10 fresh seeds at the winner.
fn tuned_gaps(algorithm: Algorithm) -> (ParamsConfig, Vec<f64>, usize) {
    let c = StepSchedule::constant;
    let base = experiment(algorithm, schedule_params(c(1e-3), c(1e-3), c(1e-3), c(1e-3), 1, 10), 2024, 6);
    let grid = GridSpec {
        gamma: vec![1e-4, 1e-3, 1e-2],
        rho: vec![1e-4, 1e-3, 1e-2],
        ..Default::default()
    };
    let tuned = grid_search(&base, &grid).unwrap();
    let eval = ExperimentConfig {
        master_seed: 31_337,
        repeats: 10,
        ..tuned.best.clone()
    };
    let inst = generate_instance(&eval.instance).unwrap();
    let outcomes: Vec<_> = (0..10).map(|r| run_repeat(&eval, &inst, r).unwrap()).collect();
    let diverged = outcomes.iter().filter(|o| o.trace.diverged).count();
    (eval.params, outcomes.iter().map(|o| o.final_norm_gap).collect(), diverged)
}

fn scaled_convergence() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for algorithm in [Algorithm::Zoba, Algorithm::HfZoba] {
        let (params, gaps, diverged) = tuned_gaps(algorithm);
        let hits = gaps.iter().filter(|&&g| g <= 0.1).count();
        pass &= hits >= 8;
        let worst = gaps.iter().cloned().fold(0.0, f64::max);
        detail.push(format!(
            "{} (gamma {:.0e}, rho {:.0e}): {hits}/10 seeds <= 0.1, worst {worst:.2e}, {diverged} diverged",
            algorithm.name(),
            params.gamma.base(),
            params.rho.base()
        ));
    }
    outcome(pass, detail.join("; "))
}

fn quartile_trend(rows: &[zoba::TraceRow]) -> bool {
    let q = rows.len() / 4;
    let mean = |r: &[zoba::TraceRow]| r.iter().map(|t| t.metrics.grad_psi_norm.powi(2)).sum::<f64>() / r.len() as f64;
    q > 0 && mean(&rows[rows.len() - q..]) < mean(&rows[..q])
}

fn decaying_trend() -> Outcome {
    let decay = StepSchedule::power_decay;
    let configs = [
        (
            Algorithm::Zoba,
            schedule_params(decay(0.05, 0.6), decay(0.05, 0.6), decay(1e-2, 1.1), decay(1e-2, 1.1), 1, 10),
        ),
        (
            Algorithm::HfZoba,
            schedule_params(decay(0.05, 0.6), decay(0.05, 0.6), decay(1e-2, 0.6), decay(1e-2, 0.6), 1, 10),
        ),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (algorithm, params) in configs {
        let cfg = experiment(algorithm, params, 4242, 10);
        let inst = generate_instance(&cfg.instance).unwrap();
        let hits = (0..10)
            .filter(|&r| {
                let o = run_repeat(&cfg, &inst, r).unwrap();
                !o.trace.diverged && quartile_trend(&o.trace.rows)
            })
            .count();
        pass &= hits >= 9;
        detail.push(format!("{}: {hits}/10 seeds decrease", algorithm.name()));
    }
    outcome(pass, detail.join("; "))
}

fn determinism() -> Outcome {
    use Block::*;
    let inst: QuadraticInstance = generate_instance(&desk_instance(7)).unwrap();
    let orders = [[Z, V, X], [Z, X, V], [V, Z, X], [V, X, Z], [X, Z, V], [X, V, Z]];
    let mut s = Stream::derive(5, StreamTag::Init, 0);
    let init = SolverState::with_zero_v(uniform(10, -5.0, 10.0, &mut s), uniform(10, -5.0, 10.0, &mut s));
    let c = StepSchedule::constant;
    let params = schedule_params(c(1e-3), c(1e-2), c(1e-3), c(1e-3), 2, 3);
    let run = |hf: bool, order: [Block; 3]| {
        let mut opts = RunOptions::with_budget(20_000);
        opts.wall_clock = false;
        opts.step.update_order = order;
        let mut hook = BenchmarkMetrics::new(&inst);
        let t = if hf {
            hfzoba_run(&inst, &params.hfzoba(), init.clone(), 9, &opts, &mut hook).unwrap()
        } else {
            zoba_run(&inst, &params.zoba(), init.clone(), 9, &opts, &mut hook).unwrap()
        };
        to_csv_string(&t.rows)
    };
    let mut order_ok = true;
    for hf in [false, true] {
        let reference = run(hf, orders[0]);
        order_ok &= orders.iter().all(|&o| run(hf, o) == reference);
    }

    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut bytes_ok = true;
    for algorithm in [Algorithm::Zoba, Algorithm::HfZoba] {
        let mut cfg = experiment(algorithm, params, 77, 3);
        cfg.budget = 20_000;
        cfg.output_dir = a.path().to_path_buf();
        let ra = zoba::harness::run_experiment(&cfg).unwrap();
        cfg.output_dir = b.path().to_path_buf();
        let rb = zoba::harness::run_experiment(&cfg).unwrap();
        for (x, y) in ra.summary.repeats.iter().zip(&rb.summary.repeats) {
            let bx = std::fs::read(x.csv.as_ref().unwrap()).unwrap();
            let by = std::fs::read(y.csv.as_ref().unwrap()).unwrap();
            bytes_ok &= !bx.is_empty() && bx == by;
        }
    }
    outcome(order_ok && bytes_ok, format!("order-invariant traces: {order_ok}, byte-identical CSVs: {bytes_ok}"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("evaluation-count exactness", Some(Duration::from_secs(10)), fe_exactness),
        ("estimator unbiasedness", Some(Duration::from_secs(60)), unbiasedness),
        ("quadratic exactness", Some(Duration::from_secs(1)), quadratic_exactness),
        ("analytic-oracle consistency", Some(Duration::from_secs(30)), oracle_consistency),
        ("scaled convergence", Some(Duration::from_secs(300)), scaled_convergence),
        ("decaying-step trend", None, decaying_trend),
        ("parallel updates and determinism", None, determinism),
    ];
    let mut failed = 0;
    for (name, limit, check) in criteria {
        let t0 = Instant::now();
        let o = check();
        let elapsed = t0.elapsed();
        let in_time = limit.is_none_or(|l| elapsed <= l);
        let pass = o.pass && in_time;
        failed += usize::from(!pass);
        let limit = limit.map_or(String::new(), |l| format!(" / {}s", l.as_secs()));
        println!(
            "{} {name} [{:.2}s{limit}]: {}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            o.detail
        );
    }
    if failed == 0 {
        println!("acceptance: all 7 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} of 7 criteria failed");
        ExitCode::FAILURE
    }
}
