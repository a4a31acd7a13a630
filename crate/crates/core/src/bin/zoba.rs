use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use zoba::harness::{self, CheckSettings, ExperimentConfig};
use zoba::{fe_per_iteration_hfzoba, fe_per_iteration_zoba, Algorithm, Error};

#[derive(Parser)]
#[command(name = "zoba", version, about = "Zeroth-order bilevel optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid search over the `grid` section of a JSON config.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo unbiasedness check of all estimators on a quadratic.
    Check {
        /// Inner and outer dimension, `p,d`.
        #[arg(long, default_value = "5,5", value_parser = parse_dims)]
        dims: (usize, usize),
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[arg(long, default_value_t = 3.0)]
        tolerance: f64,
        #[arg(long, default_value_t = 1e-3)]
        h: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluations charged per iteration.
    FeCount {
        #[arg(long)]
        algo: Algorithm,
        #[arg(long)]
        b1: usize,
        #[arg(long)]
        l1: usize,
        #[arg(long)]
        b2: usize,
        #[arg(long)]
        l2: usize,
    },
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (p, d) = s.split_once(',').ok_or("expected `p,d`")?;
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}"));
    Ok((parse(p)?, parse(d)?))
}

fn exit_code(err: &Error) -> ExitCode {
    match err {
        Error::Config(_) | Error::Json { .. } | Error::EmptyTrace { .. } | Error::Singular(_) => ExitCode::from(2),
        e if e.is_divergence() => ExitCode::from(3),
        _ => ExitCode::FAILURE,
    }
}

fn load(path: &Path, out: Option<PathBuf>) -> zoba::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    for w in cfg.validate()? {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

fn run(cli: Cli) -> zoba::Result<ExitCode> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = load(&config, out)?;
            let result = harness::run_experiment(&cfg)?;
            let s = &result.summary;
            for r in &s.repeats {
                println!(
                    "repeat {:>3}  iters {:>8}  evals {:>10}  gap {:.6e}{}",
                    r.repeat,
                    r.iterations,
                    r.evaluations,
                    r.final_norm_gap,
                    if r.diverged { "  DIVERGED" } else { "" }
                );
            }
            println!(
                "{} on {}: final normalized gap {:.6e} +- {:.3e} ({} diverged)",
                s.algorithm.name(),
                s.instance_id,
                s.mean_final_norm_gap,
                s.std_final_norm_gap,
                s.diverged
            );
            if s.diverged > 0 && s.diverged == s.repeats.len() {
                return Ok(ExitCode::from(3));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Grid { config, out } => {
            let cfg = load(&config, out)?;
            let grid = cfg
                .grid
                .clone()
                .ok_or_else(|| Error::Config("config has no `grid` section".into()))?;
            let result = harness::grid_search(&cfg, &grid)?;
            harness::write_grid_result(&cfg.output_dir, &result)?;
            for e in &result.leaderboard {
                println!(
                    "#{:<4} gamma {:.1e}  rho {:.1e}  h {:.1e}  b {}  l {}  gap {:.6e} +- {:.3e}{}",
                    e.index,
                    e.params.gamma.base(),
                    e.params.rho.base(),
                    e.params.h.base(),
                    e.params.b1,
                    e.params.l1,
                    e.mean_final_norm_gap,
                    e.std_final_norm_gap,
                    if e.errors.is_empty() { String::new() } else { format!("  ({} errors)", e.errors.len()) }
                );
            }
            println!("{} runs issued", result.runs_issued);
            Ok(ExitCode::SUCCESS)
        }
        Command::Check {
            dims: (p, d),
            trials,
            tolerance,
            h,
            seed,
        } => {
            let mut settings = CheckSettings::new(trials, seed);
            settings.tolerance_se = tolerance;
            settings.h = h;
            settings.h_hat = h;
            let report = harness::check_estimators(p, d, &settings)?;
            for c in &report.checks {
                println!(
                    "{} {:<22} max |dev|/se {:>7.3}  max |dev| {:.3e}",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.max_dev_se,
                    c.max_abs_dev
                );
            }
            Ok(if report.pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::FeCount { algo, b1, l1, b2, l2 } => {
            if [b1, l1, b2, l2].contains(&0) {
                return Err(Error::Config("batch sizes and direction counts must be >= 1".into()));
            }
            let n = match algo {
                Algorithm::Zoba => fe_per_iteration_zoba(b1, l1, b2, l2),
                Algorithm::HfZoba => fe_per_iteration_hfzoba(b1, l1, b2, l2),
            };
            println!("{n}");
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
