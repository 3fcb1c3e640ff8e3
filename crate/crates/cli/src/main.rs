use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cugro::continual::ReplayVariant;
use cugro_cli::commands::{self, Overrides};
use cugro_cli::config::ExperimentConfig;
use cugro_cli::{plot, CliResult};

#[derive(Parser)]
#[command(
    name = "cugro",
    version,
    about = "Continual offline RL with diffusion-based dual generative replay"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output root holding the data and runs directories.
    #[arg(long, env = "CUGRO_OUT", default_value = ".")]
    out: PathBuf,
    /// Collection seed for `collect`, training seed otherwise.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunFlags {
    /// Replay variant: diffusion, oracle, noise or none.
    #[arg(long, value_parser = parse_variant)]
    variant: Option<ReplayVariant>,
    /// Weight of the critic's cloning term on replayed pairs.
    #[arg(long)]
    lambda: Option<f64>,
    /// Weight of the generators' replay loss.
    #[arg(long)]
    beta: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Collect one dataset per task and quality tier.
    Collect {
        #[command(flatten)]
        common: Common,
    },
    /// Train the task sequence into a run directory.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunFlags,
        /// Continue from the checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Re-evaluate a trained run and print per-task returns.
    Eval {
        run_dir: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Plot metrics files as mean_return.svg and forgetting.svg.
    Plot {
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
        #[arg(long, env = "CUGRO_OUT", default_value = ".")]
        out: PathBuf,
    },
    /// Train every combination of the configured sweep grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunFlags,
    },
}

fn parse_variant(s: &str) -> Result<ReplayVariant, String> {
    s.parse().map_err(|e: cugro::Error| e.to_string())
}

fn run(cli: Cli) -> CliResult<()> {
    let mut out = std::io::stdout();
    match cli.command {
        Command::Collect { common } => {
            let mut cfg = ExperimentConfig::load(common.config.as_deref())?;
            if let Some(seed) = common.seed {
                cfg.data.seed = seed;
            }
            commands::collect(&cfg, &common.out, &mut out)?;
        }
        Command::Train { common, run, resume } => {
            let mut cfg = ExperimentConfig::load(common.config.as_deref())?;
            Overrides {
                seed: common.seed,
                variant: run.variant,
                lambda: run.lambda,
                beta: run.beta,
            }
            .apply(&mut cfg)?;
            commands::train(&cfg, &common.out, resume, &mut out)?;
        }
        Command::Eval { run_dir, episodes } => {
            commands::eval(&run_dir, episodes, &mut out)?;
        }
        Command::Plot { metrics, out: dir } => {
            for path in plot::plot_files(&metrics, &dir)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Sweep { common, run } => {
            let cfg = ExperimentConfig::load(common.config.as_deref())?;
            let overrides = Overrides {
                seed: common.seed,
                variant: run.variant,
                lambda: run.lambda,
                beta: run.beta,
            };
            commands::sweep(&cfg, &common.out, &overrides, &mut out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
