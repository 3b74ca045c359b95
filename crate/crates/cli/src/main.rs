mod commands;
mod config;
mod error;
mod run_dir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "homarl", version, about = "Offline multi-agent RL with set-transformer function classes")]
struct Cli {
    /// TOML run configuration; every section is optional except `seed`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration's seed; required when no config file is given.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory under which timestamped run directories are created.
    #[arg(long, global = true, env = "HOMARL_RUN_ROOT", default_value = "runs")]
    run_root: PathBuf,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true, env = "HOMARL_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Roll out the behavior policy and write a dataset.
    Collect,
    /// Train the pessimistic model-free learner on a dataset.
    TrainMf {
        /// Dataset file; overrides `dataset.path`.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Fit the dynamics ensemble and plan against its least favorable member.
    TrainMb {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Evaluate a policy checkpoint, or the configured behavior policy, in the environment.
    Eval {
        #[arg(long, conflicts_with = "behavior", required_unless_present = "behavior")]
        policy: Option<PathBuf>,
        #[arg(long)]
        behavior: bool,
    },
    /// Randomized falsification of the Lipschitz and norm propositions.
    VerifyBounds {
        /// Overrides `bounds.trials`.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Evaluate the generalization and suboptimality bounds for `bounds.inputs`.
    BoundsCalc,
    /// Width sweep of deep-sets fits to a set-attention target.
    ApproxGap {
        /// Sup-error threshold that defines the width needed.
        #[arg(long, default_value_t = 0.05)]
        xi: f64,
    },
    /// Fit the dynamics model on growing synthetic datasets and report the TV error.
    MleProbe,
    /// Print the full default configuration for a seed.
    Defaults,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Collect => "collect",
            Self::TrainMf { .. } => "train-mf",
            Self::TrainMb { .. } => "train-mb",
            Self::Eval { .. } => "eval",
            Self::VerifyBounds { .. } => "verify-bounds",
            Self::BoundsCalc => "bounds-calc",
            Self::ApproxGap { .. } => "approx-gap",
            Self::MleProbe => "mle-probe",
            Self::Defaults => "defaults",
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Schema("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("cannot start the thread pool: {e}")))?;
    }
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path, cli.seed)?,
        None => RunConfig::resolve(None, cli.seed)?,
    };
    if let Command::Defaults = cli.command {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let mut run = run_dir::RunDir::create(&cli.run_root, cli.command.name(), &cfg)?;
    let outcome = match cli.command {
        Command::Collect => commands::collect(&cfg, &mut run),
        Command::TrainMf { dataset } => commands::train_mf(&cfg, dataset, &mut run),
        Command::TrainMb { dataset } => commands::train_mb(&cfg, dataset, &mut run),
        Command::Eval { policy, behavior: _ } => commands::eval(&cfg, policy, &mut run),
        Command::VerifyBounds { trials } => commands::verify_bounds(&cfg, trials, &mut run),
        Command::BoundsCalc => commands::bounds_calc(&cfg, &mut run),
        Command::ApproxGap { xi } => commands::approx_gap(&cfg, xi, &mut run),
        Command::MleProbe => commands::mle_probe(&cfg, &mut run),
        Command::Defaults => unreachable!("handled above"),
    };
    if let Err(e) = &outcome {
        run.record("status", format!("failed (exit {}): {e}", e.exit_code()));
    }
    run.finish()?;
    outcome
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
