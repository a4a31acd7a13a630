use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hfzoba::hfzoba_run;
use crate::quadratic::{generate_instance, QuadraticInstance};
use crate::rng::{split_seed, Stream, StreamTag};
use crate::solver::SolverState;
use crate::trace::{write_csv, Algorithm, RunTrace};
use crate::zoba::zoba_run;

use super::config::ExperimentConfig;
use super::metrics::BenchmarkMetrics;

/// Seed of repeat `r`.
pub fn repeat_seed(master: u64, r: usize) -> u64 {
    split_seed(master, StreamTag::Repeat, r as u64)
}

/// `x0`, `z0` uniform in `[lo, hi]` from the init stream of `seed`; `v0 = 0`.
pub fn initial_state(seed: u64, p: usize, d: usize, init_box: [f64; 2]) -> SolverState {
    let mut s = Stream::derive(seed, StreamTag::Init, 0);
    let [lo, hi] = init_box;
    let x = DVector::from_fn(d, |_, _| s.uniform_in(lo, hi));
    let z = DVector::from_fn(p, |_, _| s.uniform_in(lo, hi));
    SolverState::with_zero_v(x, z)
}

#[derive(Debug, Clone)]
pub struct RepeatOutcome {
    pub repeat: usize,
    pub seed: u64,
    pub trace: RunTrace,
    /// Normalized gap at the last iterate; 1 for a diverged run.
    pub final_norm_gap: f64,
}

/// Runs repeat `r` of `config` on `instance`. Divergence is folded into the
/// outcome; configuration problems are returned as errors.
pub fn run_repeat(config: &ExperimentConfig, instance: &QuadraticInstance, r: usize) -> Result<RepeatOutcome> {
    let seed = repeat_seed(config.master_seed, r);
    let init = initial_state(seed, instance.p(), instance.d(), config.init_box);
    let options = config.run_options();
    let mut hook = BenchmarkMetrics::new(instance);
    let result = match config.algorithm {
        Algorithm::Zoba => zoba_run(instance, &config.params.zoba(), init, seed, &options, &mut hook),
        Algorithm::HfZoba => hfzoba_run(instance, &config.params.hfzoba(), init, seed, &options, &mut hook),
    };
    let mut trace = match result {
        Ok(trace) => trace,
        Err(Error::RunDiverged { trace }) => *trace,
        Err(e) => return Err(e),
    };
    trace.meta.instance_id = Some(instance.id().to_string());
    let final_norm_gap = match (&trace.final_metrics, trace.diverged) {
        (Some(m), false) if m.norm_gap.is_finite() => m.norm_gap,
        _ => 1.0,
    };
    Ok(RepeatOutcome {
        repeat: r,
        seed,
        trace,
        final_norm_gap,
    })
}

pub(crate) fn run_all(
    config: &ExperimentConfig,
    instance: &QuadraticInstance,
) -> Result<Vec<RepeatOutcome>> {
    if config.discard_first {
        run_repeat(config, instance, config.repeats)?;
    }
    if config.parallel_repeats {
        (0..config.repeats)
            .into_par_iter()
            .map(|r| run_repeat(config, instance, r))
            .collect()
    } else {
        (0..config.repeats).map(|r| run_repeat(config, instance, r)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatSummary {
    pub repeat: usize,
    pub seed: u64,
    pub iterations: usize,
    pub evaluations: u64,
    pub diverged: bool,
    pub final_norm_gap: f64,
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub algorithm: Algorithm,
    pub instance_id: String,
    pub master_seed: u64,
    pub budget: u64,
    pub per_iteration: u64,
    pub params: serde_json::Value,
    pub warnings: Vec<String>,
    pub repeats: Vec<RepeatSummary>,
    pub mean_final_norm_gap: f64,
    pub std_final_norm_gap: f64,
    pub diverged: usize,
}

impl ExperimentSummary {
    pub(crate) fn new(
        config: &ExperimentConfig,
        instance_id: &str,
        warnings: Vec<String>,
        outcomes: &[RepeatOutcome],
    ) -> Self {
        let gaps: Vec<f64> = outcomes.iter().map(|o| o.final_norm_gap).collect();
        let (mean, std) = mean_std(&gaps);
        Self {
            algorithm: config.algorithm,
            instance_id: instance_id.to_string(),
            master_seed: config.master_seed,
            budget: config.budget,
            per_iteration: config.per_iteration(),
            params: serde_json::to_value(config.params).expect("params serialize"),
            warnings,
            repeats: outcomes
                .iter()
                .map(|o| RepeatSummary {
                    repeat: o.repeat,
                    seed: o.seed,
                    iterations: o.trace.iterations,
                    evaluations: o.trace.evaluations,
                    diverged: o.trace.diverged,
                    final_norm_gap: o.final_norm_gap,
                    csv: None,
                })
                .collect(),
            mean_final_norm_gap: mean,
            std_final_norm_gap: std,
            diverged: outcomes.iter().filter(|o| o.trace.diverged).count(),
        }
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub outcomes: Vec<RepeatOutcome>,
    pub summary: ExperimentSummary,
}

impl ExperimentResult {
    pub fn traces(&self) -> impl Iterator<Item = &RunTrace> {
        self.outcomes.iter().map(|o| &o.trace)
    }
}

/// Runs every repeat of `config`, writes one CSV per repeat and a
/// `summary.json` into `config.output_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let warnings = config.validate()?;
    let instance = generate_instance(&config.instance)?;
    let outcomes = run_all(config, &instance)?;
    let mut summary = ExperimentSummary::new(config, instance.id(), warnings, &outcomes);

    let dir = &config.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (o, s) in outcomes.iter().zip(summary.repeats.iter_mut()) {
        let path = dir.join(format!(
            "{}_{}_r{:03}.csv",
            config.algorithm.name(),
            instance.id(),
            o.repeat
        ));
        write_trace_csv(&path, &o.trace)?;
        s.csv = Some(path);
    }
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(ExperimentResult { outcomes, summary })
}

pub(crate) fn write_trace_csv(path: &Path, trace: &RunTrace) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(&trace.rows, BufWriter::new(file))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}
