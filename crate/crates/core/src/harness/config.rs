use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hfzoba::{HfZobaParams, DEFAULT_V_ZERO_THRESHOLD};
use crate::problem::StepSchedule;
use crate::quadratic::InstanceSpec;
use crate::solver::{RunOptions, StepOptions, DEFAULT_MAX_ITERATIONS};
use crate::trace::Algorithm;
use crate::zoba::ZobaParams;

use super::grid::GridSpec;

pub const DEFAULT_INIT_BOX: [f64; 2] = [-5.0, 10.0];

/// Solver parameters for either algorithm. `h_hat` is only read by HF-ZOBA
/// and falls back to `h` when absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamsConfig {
    pub gamma: StepSchedule,
    pub rho: StepSchedule,
    pub h: StepSchedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_hat: Option<StepSchedule>,
    pub b1: usize,
    pub b2: usize,
    pub l1: usize,
    pub l2: usize,
    #[serde(default = "default_threshold")]
    pub v_zero_threshold: f64,
}

fn default_threshold() -> f64 {
    DEFAULT_V_ZERO_THRESHOLD
}

impl ParamsConfig {
    pub fn zoba(&self) -> ZobaParams {
        ZobaParams {
            gamma: self.gamma,
            rho: self.rho,
            h: self.h,
            b1: self.b1,
            b2: self.b2,
            l1: self.l1,
            l2: self.l2,
        }
    }

    pub fn hfzoba(&self) -> HfZobaParams {
        HfZobaParams {
            gamma: self.gamma,
            rho: self.rho,
            h: self.h,
            h_hat: self.h_hat.unwrap_or(self.h),
            b1: self.b1,
            b2: self.b2,
            l1: self.l1,
            l2: self.l2,
            v_zero_threshold: self.v_zero_threshold,
        }
    }

    pub fn per_iteration(&self, algorithm: Algorithm) -> u64 {
        match algorithm {
            Algorithm::Zoba => self.zoba().per_iteration(),
            Algorithm::HfZoba => self.hfzoba().per_iteration(),
        }
    }

    /// Validates for `algorithm`; returns warnings.
    pub fn validate(&self, algorithm: Algorithm) -> Result<Vec<String>> {
        match algorithm {
            Algorithm::Zoba => self.zoba().validate().map(|_| Vec::new()),
            Algorithm::HfZoba => self.hfzoba().validate(),
        }
    }
}

fn default_repeats() -> usize {
    1
}

fn default_max_iterations() -> usize {
    DEFAULT_MAX_ITERATIONS
}

fn default_init_box() -> [f64; 2] {
    DEFAULT_INIT_BOX
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_stride() -> usize {
    1
}

fn default_true() -> bool {
    true
}

/// One experiment, read from a JSON document. `master_seed` is mandatory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub instance: InstanceSpec,
    pub params: ParamsConfig,
    /// Function-evaluation budget per run.
    pub budget: u64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    pub master_seed: u64,
    /// Box `[lo, hi]` for the uniform draw of `x0` and `z0`.
    #[serde(default = "default_init_box")]
    pub init_box: [f64; 2],
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_stride")]
    pub metric_stride: usize,
    #[serde(default = "default_true")]
    pub wall_clock: bool,
    /// Run (and drop) one warm-up repeat before the recorded ones.
    #[serde(default)]
    pub discard_first: bool,
    /// Run repeats (and grid points) on the rayon pool.
    #[serde(default)]
    pub parallel_repeats: bool,
    #[serde(default)]
    pub step: StepOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| match e.classify() {
            serde_json::error::Category::Io => Error::Json {
                path: path.to_path_buf(),
                source: e,
            },
            _ => Error::config(format!("{}: {e}", path.display())),
        })?;
        Ok(cfg)
    }

    pub fn per_iteration(&self) -> u64 {
        self.params.per_iteration(self.algorithm)
    }

    /// Checks the whole configuration; returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let warnings = self.params.validate(self.algorithm)?;
        if self.repeats == 0 {
            return Err(Error::config("repeats must be >= 1"));
        }
        let per_iteration = self.per_iteration();
        if self.budget < per_iteration {
            return Err(Error::config(format!(
                "budget {} is below one iteration's cost {per_iteration}",
                self.budget
            )));
        }
        let [lo, hi] = self.init_box;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::config(format!("init box [{lo}, {hi}] is empty")));
        }
        if self.metric_stride == 0 {
            return Err(Error::config("metric_stride must be >= 1"));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("max_iterations must be >= 1"));
        }
        Ok(warnings)
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            budget: self.budget,
            max_iterations: self.max_iterations,
            metric_stride: self.metric_stride,
            wall_clock: self.wall_clock,
            step: self.step,
        }
    }
}
