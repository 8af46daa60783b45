use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use igv_ace_cli::commands;
use igv_ace_cli::config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "igv-ace", version, about = "Counterfactual PID retuning experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every instance `n_runs` times and write the result files.
    Run {
        config: PathBuf,
        /// Overrides `output` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `n_runs` from the config.
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Print the summary table of a finished run.
    Report { dir: PathBuf },
    /// Generate, identify and label the historian archive of run 0 only.
    Historian {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Label a single controller with one step test.
    StepTest {
        config: PathBuf,
        /// Comma-separated controller parameters, e.g. `3.7,0.05,40,1.2`.
        #[arg(long, allow_hyphen_values = true)]
        theta: String,
        #[arg(long)]
        noise_free: bool,
        /// Noise seed; defaults to the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load(path: &Path, out: Option<PathBuf>, runs: Option<usize>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(o) = out {
        cfg.output = o;
    }
    if let Some(n) = runs {
        cfg.n_runs = n;
        cfg.designated_run = cfg.designated_run.min(n.saturating_sub(1));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main_inner() -> Result<()> {
    match Cli::parse().cmd {
        Command::Run { config, out, runs } => {
            let cfg = load(&config, out, runs)?;
            commands::run(&cfg)?;
            print!("{}", commands::report(&cfg.output)?);
        }
        Command::Report { dir } => print!("{}", commands::report(&dir)?),
        Command::Historian { config, out } => commands::historian(&load(&config, out, None)?)?,
        Command::StepTest { config, theta, noise_free, seed } => {
            let cfg = load(&config, None, None)?;
            let mut sim = cfg.sim.with_seed(seed.unwrap_or(cfg.seed));
            sim.noise_free |= noise_free;
            let (m, label, rho) = commands::step_test(&cfg, &commands::parse_theta(&theta)?, &sim)?;
            commands::print_step_test(std::io::stdout().lock(), &m, label, rho)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match main_inner() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
