use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use gpope_core::harness::experiment::ExperimentOutput;
use gpope_core::harness::oracle::{oracle_mspbe_stats, stats_to_text};
use gpope_core::harness::training::{average_return, train_mountain_car_policy};
use gpope_core::harness::{run_experiment, step_size_sensitivity, write_csv, ExperimentConfig};
use gpope_core::privacy::{audit_run, calibrate_sigma, PrivacyBudget};
use gpope_core::Policy;

#[derive(Parser)]
#[command(
    name = "gpope",
    version,
    about = "Differentially private off-policy evaluation experiments"
)]
struct Cli {
    /// Overrides the master seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment grid of a config and write its CSV.
    Run {
        config: PathBuf,
        /// Overrides the config's output path.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Smallest noise scale meeting an (ε, δ) budget.
    Calibrate {
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
        /// Dataset size (number of trajectories).
        #[arg(long)]
        m: u64,
        /// Number of iterations.
        #[arg(long = "N", alias = "iterations")]
        n: u64,
    },
    /// Step-size sensitivity sweep over the config's multipliers.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Comma-separated multipliers; defaults to the config's list.
        #[arg(long, value_delimiter = ',')]
        multipliers: Option<Vec<f64>>,
    },
    /// Compute the oracle statistics of a config and write them to a file.
    Oracle {
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train a mountain-car behavior policy and save it.
    TrainPolicy {
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also report the mean return over this many rollouts.
        #[arg(long)]
        evaluate: Option<usize>,
    },
}

/// Errors reported with exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn report(out: &ExperimentOutput, path: &Path) {
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    for t in &out.tuning {
        println!(
            "best multiplier m={} epsilon={} schedule={}: {} (median final MSPBE {:.4e})",
            t.m, t.epsilon, t.schedule, t.multiplier, t.median_final_mspbe
        );
    }
    println!("wrote {} rows to {}", out.rows.len(), path.display());
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("gpope");
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, output } => {
            let cfg = load_config(&config, cli.seed)?;
            let out = run_experiment(&cfg)?;
            let path = output.unwrap_or(cfg.output);
            write_csv(&path, &out.rows)?;
            report(&out, &path);
        }
        Command::Sweep {
            config,
            output,
            multipliers,
        } => {
            let cfg = load_config(&config, cli.seed)?;
            let mults = multipliers.unwrap_or_else(|| cfg.schedule.multipliers.clone());
            let out = step_size_sensitivity(&cfg, &mults)?;
            let path = output.unwrap_or(cfg.output);
            write_csv(&path, &out.rows)?;
            report(&out, &path);
        }
        Command::Calibrate { epsilon, delta, m, n } => {
            let budget = PrivacyBudget::new(epsilon, delta).map_err(|e| UsageError(e.to_string()))?;
            let cal = calibrate_sigma(budget, m, n)?;
            let audit = audit_run(cal.sigma, m, n, budget)?;
            println!("sigma = {}", cal.sigma);
            println!("lambda_star = {}", cal.lambda_star);
            println!("unfloored_sigma = {}", cal.unfloored_sigma);
            println!();
            print!("{}", audit.to_text());
        }
        Command::Oracle { config, output } => {
            let cfg = load_config(&config, cli.seed)?;
            for w in gpope_core::harness::oracle::oracle_warnings(&cfg) {
                eprintln!("warning: {w}");
            }
            let stats = oracle_mspbe_stats(&cfg)?;
            let path = output
                .or_else(|| cfg.oracle.output.clone())
                .unwrap_or_else(|| sibling(&cfg.output, "oracle.toml"));
            write_text(&path, &stats_to_text(&stats))?;
            println!(
                "wrote {}-dimensional oracle statistics to {}",
                stats.dim(),
                path.display()
            );
        }
        Command::TrainPolicy {
            config,
            output,
            evaluate,
        } => {
            let cfg = load_config(&config, cli.seed)?;
            let seed = gpope_core::harness::seeds::training(cfg.seed);
            let policy = train_mountain_car_policy(&cfg.training, seed)?;
            let path = output
                .or_else(|| cfg.training.output.clone())
                .unwrap_or_else(|| sibling(&cfg.output, "policy.toml"));
            write_text(&path, &policy.to_text())?;
            println!("wrote policy to {}", path.display());
            if let Some(episodes) = evaluate.filter(|&e| e > 0) {
                let len = cfg.training.max_episode_len;
                let trained = average_return(&Policy::LinearQ(policy), episodes, len, seed ^ 1);
                let uniform = average_return(&Policy::uniform(3), episodes, len, seed ^ 1);
                println!("mean return: trained {trained:.1}, uniform {uniform:.1}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.downcast_ref::<UsageError>().is_some()
                || matches!(
                    e.downcast_ref::<gpope_core::Error>(),
                    Some(gpope_core::Error::Config(_))
                );
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
