//! `phi4lab`: batch runner for renormalization tables, enhanced-noise
//! statistics, simulations, decompositions and ε-sweeps.

mod artifacts;
mod commands;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use phi4_core::ExperimentConfig;

pub type AnyResult<T> = Result<T, Box<dyn std::error::Error + Send + Sync>>;

#[derive(Parser, Debug)]
#[command(name = "phi4lab", version, about = "Experiments on weakly nonlinear stochastic reaction-diffusion models")]
struct Cli {
    /// JSON experiment configuration; defaults are used for missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for ensemble and sweep parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Chaos coefficients, renormalization constants and λ per ε.
    Renorm,
    /// Enhanced-noise regularity fits and decay statistics.
    Trees,
    /// Trajectories of the rescaled equation.
    Simulate,
    /// Paracontrolled split of trajectories with residual diagnostics.
    Decompose,
    /// ε-sweep against the classical cubic dynamics.
    Converge,
    /// A-priori maximum-principle bound on decomposed trajectories.
    Maxprinciple,
    /// Fast invariant suite.
    Selftest,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Self::Renorm => "renorm",
            Self::Trees => "trees",
            Self::Simulate => "simulate",
            Self::Decompose => "decompose",
            Self::Converge => "converge",
            Self::Maxprinciple => "maxprinciple",
            Self::Selftest => "selftest",
        }
    }
}

/// What a finished command reports back: whether its checks held and a
/// one-line summary.
pub struct Outcome {
    pub ok: bool,
    pub summary: String,
}

fn load_config(cli: &Cli) -> AnyResult<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| format!("{}: {e}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("phi4lab: invalid configuration: {e}");
            return ExitCode::from(1);
        }
    };
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("phi4lab: cannot start {n} workers: {e}");
            return ExitCode::from(1);
        }
    }
    let name = cli.command.name();
    let mut art = match artifacts::Artifacts::open(&cfg.output_dir, &cfg.hash(), name) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("phi4lab: cannot prepare {}: {e}", cfg.output_dir.display());
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Renorm => commands::renorm(&cfg, &mut art),
        Command::Trees => commands::trees(&cfg, &mut art),
        Command::Simulate => commands::simulate(&cfg, &mut art),
        Command::Decompose => commands::decompose(&cfg, &mut art),
        Command::Converge => commands::converge(&cfg, &mut art),
        Command::Maxprinciple => commands::maxprinciple(&cfg, &mut art),
        Command::Selftest => selftest::run(&cfg, &mut art),
    };
    match result {
        Ok(out) => {
            let status = if out.ok { "complete" } else { "checks_failed" };
            if let Err(e) = art.close(name, status, &out.summary) {
                eprintln!("phi4lab: {e}");
                return ExitCode::from(1);
            }
            println!("{name}: {}", out.summary);
            if out.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            }
        }
        Err(e) => {
            eprintln!("phi4lab {name}: {e}");
            let _ = art.close(name, "incomplete", &e.to_string());
            ExitCode::from(1)
        }
    }
}
