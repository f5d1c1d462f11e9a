use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use trajplan_cli::commands::{self, TmInputs};
use trajplan_cli::config::RunConfig;
use trajplan_cli::error::{exit, CliError};

/// Trajectory planning pipeline: babbling, model training, optimizer sweeps,
/// inference, evaluation and latency benchmarking.
#[derive(Debug, Parser)]
#[command(name = "trajplan", version)]
struct Cli {
    /// JSON run config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed the subcommand uses.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample motor-babbling transitions.
    Babble,
    /// Record joint-space trajectories and their endpoint pairs.
    Record,
    /// Train the forward model on babbling transitions.
    TrainFm {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train the inverse model on babbling transitions.
    TrainIm {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train the trajectory model against the frozen forward/inverse models.
    TrainTm {
        #[command(flatten)]
        inputs: TmArgs,
    },
    /// Train the trajectory model under every sweep config and tabulate results.
    Sweep {
        #[command(flatten)]
        inputs: TmArgs,
        /// Comma-separated config names to run (default: all).
        #[arg(long, value_delimiter = ',')]
        configs: Vec<String>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Generate trajectories for endpoint pairs.
    Infer {
        #[arg(long)]
        tm: Option<PathBuf>,
        #[arg(long)]
        endpoints: Option<PathBuf>,
    },
    /// Score predicted trajectories (a file, or a directory of .jsonl files).
    Eval {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Time single-trajectory inference.
    Bench {
        /// Trained model; the configured architecture with random weights otherwise.
        #[arg(long)]
        tm: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Print the effective config as JSON.
    Config,
}

#[derive(Debug, clap::Args)]
struct TmArgs {
    #[arg(long)]
    fm: Option<PathBuf>,
    #[arg(long)]
    im: Option<PathBuf>,
    #[arg(long)]
    endpoints: Option<PathBuf>,
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        match &cli.command {
            Command::Babble => cfg.babbling.seed = seed,
            Command::Record => cfg.recording.seed = seed,
            Command::TrainFm { .. } => cfg.fm.seed = seed,
            Command::TrainIm { .. } => cfg.im.seed = seed,
            Command::TrainTm { .. } => {
                cfg.tm.init_seed = seed;
                cfg.tm.train.seed = seed;
            }
            Command::Sweep { .. } => cfg.sweep.master_seed = seed,
            Command::Bench { .. } => cfg.bench.seed = seed,
            Command::Infer { .. } | Command::Eval { .. } | Command::Config => {}
        }
    }
    if let Command::Sweep { configs, trials, .. } = &cli.command {
        if !configs.is_empty() {
            commands::select_configs(&mut cfg, configs)?;
        }
        if let Some(t) = trials {
            cfg.sweep.trials = *t;
        }
    }
    if let Command::Bench { trials: Some(t), .. } = &cli.command {
        cfg.bench.trials = *t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Babble => {
            commands::babble(&cfg)?;
        }
        Command::Record => {
            commands::record(&cfg)?;
        }
        Command::TrainFm { data } => {
            commands::train_forward(&cfg, data)?;
        }
        Command::TrainIm { data } => {
            commands::train_inverse(&cfg, data)?;
        }
        Command::TrainTm { inputs } => {
            let inputs = TmInputs::load(&cfg, inputs.fm, inputs.im, inputs.endpoints)?;
            commands::train_trajectory(&cfg, &inputs)?;
        }
        Command::Sweep { inputs, .. } => {
            let inputs = TmInputs::load(&cfg, inputs.fm, inputs.im, inputs.endpoints)?;
            commands::sweep(&cfg, &inputs)?;
        }
        Command::Infer { tm, endpoints } => {
            commands::infer(&cfg, tm, endpoints)?;
        }
        Command::Eval { input } => {
            commands::eval(&cfg, input)?;
        }
        Command::Bench { tm, .. } => {
            commands::bench(&cfg, tm)?;
        }
        Command::Config => println!("{}", serde_json::to_string_pretty(&cfg)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
