//! `bench run` and `bench oracle`.

use std::path::PathBuf;
use std::process::ExitCode;

use cfpi::estimator::Mode;
use cfpi::montecarlo::run_monte_carlo;
use cfpi::oracle::suite::{run_oracle_suite, Mutation, SuiteConfig};
use cfpi::preintegration::PreintModel;
use cfpi::scenario::ScenarioConfig;
use clap::{Parser, Subcommand};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_ORACLE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "bench", about = "Compare IMU preintegration models on simulated data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte-Carlo comparison of the preintegration models.
    Run {
        /// Scenario JSON.
        #[arg(long)]
        config: PathBuf,
        /// Overrides `estimator.mode`.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
        /// Comma-separated subset of m1, m2, discrete.
        #[arg(long, value_delimiter = ',', value_parser = parse_model)]
        models: Option<Vec<PreintModel>>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Closed-form, Jacobian, bias-correction and marginalization oracles.
    Oracle {
        /// Multiplies every tolerance.
        #[arg(long, default_value_t = 1.0)]
        tolerance_scale: f64,
        /// Injects a sign flip into the `H_β` recursion.
        #[arg(long)]
        inject_hb_sign_flip: bool,
        /// Fewer draws per check.
        #[arg(long)]
        quick: bool,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    Mode::parse(s).ok_or_else(|| format!("unknown mode '{s}', expected tightly-coupled or loosely-coupled"))
}

fn parse_model(s: &str) -> Result<PreintModel, String> {
    PreintModel::parse(s).ok_or_else(|| format!("unknown model '{s}', expected m1, m2 or discrete"))
}

/// Loads the scenario and applies the command-line overrides.
pub fn scenario(
    config: &std::path::Path,
    mode: Option<Mode>,
    models: Option<Vec<PreintModel>>,
    runs: Option<usize>,
    seed: Option<u64>,
) -> Result<ScenarioConfig, cfpi::scenario::ConfigError> {
    let mut cfg = ScenarioConfig::load(config)?;
    if let Some(m) = mode {
        cfg.estimator.mode = m;
    }
    if let Some(m) = models {
        cfg.models = m;
    }
    if let Some(r) = runs {
        cfg.runs = r;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: Cli) -> ExitCode {
    match cli.command {
        Command::Run { config, mode, models, runs, seed, out } => {
            let cfg = match scenario(&config, mode, models, runs, seed) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            let report = run_monte_carlo(&cfg);
            if let Err(e) = report.write(&out) {
                eprintln!("error: cannot write results to {}: {e}", out.display());
                return ExitCode::from(EXIT_CONFIG);
            }
            println!("{:<9} {:>12} {:>14} {:>10} {:>9}", "model", "pos_rmse_m", "ori_rmse_deg", "nees_mean", "diverged");
            for m in &report.models {
                let s = &m.summary;
                let nees = s.nees_mean.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into());
                println!(
                    "{:<9} {:>12.5} {:>14.5} {:>10} {:>9}",
                    m.model.name(),
                    s.pos_rmse_m,
                    s.ori_rmse_deg,
                    nees,
                    s.diverged_runs
                );
            }
            let t = report.timing;
            eprintln!(
                "simulate {:.2} s, estimate {:.2} s, wall {:.2} s",
                t.simulate.as_secs_f64(),
                t.estimate.as_secs_f64(),
                t.total.as_secs_f64()
            );
            ExitCode::from(EXIT_OK)
        }
        Command::Oracle { tolerance_scale, inject_hb_sign_flip, quick } => {
            if !(tolerance_scale > 0.0 && tolerance_scale.is_finite()) {
                eprintln!("error: --tolerance-scale must be positive");
                return ExitCode::from(EXIT_CONFIG);
            }
            let mut cfg = SuiteConfig { tolerance_scale, ..Default::default() };
            if inject_hb_sign_flip {
                cfg.mutation = Some(Mutation::FlipHbSign);
            }
            if quick {
                cfg.mean_draws = 100;
                cfg.rk4_substeps = 2000;
                cfg.jacobian_draws = 10;
                cfg.bias_draws = 10;
            }
            let report = run_oracle_suite(&cfg);
            for c in &report.checks {
                let verdict = if c.passed { "PASS" } else { "FAIL" };
                println!("{verdict} {:<28} worst/tol {:>10.3e}  {:>7.2} s", c.name, c.worst, c.elapsed.as_secs_f64());
            }
            if report.passed() {
                ExitCode::from(EXIT_OK)
            } else {
                ExitCode::from(EXIT_ORACLE)
            }
        }
    }
}
