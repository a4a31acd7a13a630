use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadratic::generate_instance;

use super::config::{ExperimentConfig, ParamsConfig};
use super::experiment::{mean_std, run_repeat, write_json};

/// Axes of a hyper-parameter lattice. An empty axis keeps the base value.
/// Step-size axes replace the schedule's base and keep its kind and exponent;
/// `b` sets `b1 = b2`, `l` sets `l1 = l2`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub gamma: Vec<f64>,
    pub rho: Vec<f64>,
    pub h: Vec<f64>,
    pub h_hat: Vec<f64>,
    pub b: Vec<usize>,
    pub l: Vec<usize>,
}

fn axis<T: Copy>(values: &[T]) -> Vec<Option<T>> {
    if values.is_empty() {
        vec![None]
    } else {
        values.iter().copied().map(Some).collect()
    }
}

/// Cartesian product of the axes, `gamma` varying slowest.
pub fn lattice(base: &ParamsConfig, grid: &GridSpec) -> Vec<ParamsConfig> {
    let mut out = Vec::new();
    for gamma in axis(&grid.gamma) {
        for rho in axis(&grid.rho) {
            for h in axis(&grid.h) {
                for h_hat in axis(&grid.h_hat) {
                    for b in axis(&grid.b) {
                        for l in axis(&grid.l) {
                            let mut p = *base;
                            if let Some(g) = gamma {
                                p.gamma = p.gamma.with_base(g);
                            }
                            if let Some(r) = rho {
                                p.rho = p.rho.with_base(r);
                            }
                            if let Some(h) = h {
                                p.h = p.h.with_base(h);
                            }
                            if let Some(hh) = h_hat {
                                p.h_hat = Some(p.h_hat.unwrap_or(p.h).with_base(hh));
                            }
                            if let Some(b) = b {
                                p.b1 = b;
                                p.b2 = b;
                            }
                            if let Some(l) = l {
                                p.l1 = l;
                                p.l2 = l;
                            }
                            out.push(p);
                        }
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    /// Position in [`lattice`] order.
    pub index: usize,
    pub params: ParamsConfig,
    pub mean_final_norm_gap: f64,
    pub std_final_norm_gap: f64,
    pub final_norm_gaps: Vec<f64>,
    /// Repeat seeds; identical across lattice points.
    pub seeds: Vec<u64>,
    pub diverged: usize,
    /// Runs that failed outright; each counts with gap 1.
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    /// Ascending mean final gap; ties go to smaller gamma, then smaller rho,
    /// then lattice order.
    pub leaderboard: Vec<LeaderboardEntry>,
    pub runs_issued: usize,
    pub best: ExperimentConfig,
}

/// Runs every lattice point with the same `repeats` initializations.
pub fn grid_search(base: &ExperimentConfig, grid: &GridSpec) -> Result<GridResult> {
    if base.repeats == 0 {
        return Err(Error::config("repeats must be >= 1"));
    }
    let instance = generate_instance(&base.instance)?;
    let points = lattice(&base.params, grid);
    let configs: Vec<ExperimentConfig> = points
        .iter()
        .map(|p| ExperimentConfig {
            params: *p,
            grid: None,
            ..base.clone()
        })
        .collect();

    let evaluate = |(index, cfg): (usize, &ExperimentConfig)| -> LeaderboardEntry {
        let mut gaps = Vec::with_capacity(cfg.repeats);
        let mut seeds = Vec::with_capacity(cfg.repeats);
        let mut errors = Vec::new();
        let mut diverged = 0;
        let valid = cfg.validate();
        for r in 0..cfg.repeats {
            seeds.push(super::experiment::repeat_seed(cfg.master_seed, r));
            let outcome = match &valid {
                Ok(_) => run_repeat(cfg, &instance, r),
                Err(e) => Err(Error::config(e.to_string())),
            };
            match outcome {
                Ok(o) => {
                    diverged += usize::from(o.trace.diverged);
                    gaps.push(o.final_norm_gap);
                }
                Err(e) => {
                    errors.push(format!("repeat {r}: {e}"));
                    gaps.push(1.0);
                }
            }
        }
        let (mean, std) = mean_std(&gaps);
        LeaderboardEntry {
            index,
            params: cfg.params,
            mean_final_norm_gap: mean,
            std_final_norm_gap: std,
            final_norm_gaps: gaps,
            seeds,
            diverged,
            errors,
        }
    };

    let mut leaderboard: Vec<LeaderboardEntry> = if base.parallel_repeats {
        configs.par_iter().enumerate().map(evaluate).collect()
    } else {
        configs.iter().enumerate().map(evaluate).collect()
    };
    leaderboard.sort_by(|a, b| {
        a.mean_final_norm_gap
            .total_cmp(&b.mean_final_norm_gap)
            .then(a.params.gamma.base().total_cmp(&b.params.gamma.base()))
            .then(a.params.rho.base().total_cmp(&b.params.rho.base()))
            .then(a.index.cmp(&b.index))
    });
    let best = configs[leaderboard[0].index].clone();
    Ok(GridResult {
        runs_issued: configs.len() * base.repeats,
        leaderboard,
        best,
    })
}

/// Writes `leaderboard.json` and `best_config.json` into `dir`.
pub fn write_grid_result(dir: &Path, result: &GridResult) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join("leaderboard.json"), &result.leaderboard)?;
    write_json(&dir.join("best_config.json"), &result.best)
}
