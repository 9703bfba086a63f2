mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rgns_core::Precision;

#[derive(Debug, Parser)]
#[command(name = "rgns", version, about = "Reversible graph-network particle simulator")]
struct Cli {
    /// Seed for every random draw; overrides seeds found in config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Arithmetic width for training, or to cast a loaded checkpoint to.
    #[arg(long, global = true)]
    precision: Option<Precision>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate toy trajectories.
    Gen(GenArgs),
    /// Train a model on a directory of trajectories.
    Train(TrainArgs),
    /// Forward rollout from a trajectory frame.
    Rollout(RolloutArgs),
    /// Inverse rollout from a trajectory frame.
    Invert(RolloutArgs),
    /// Infer an initial state for a mask-shaped target and replay it.
    Goal(GoalArgs),
    /// Compute the metric report over a directory of trajectories.
    Eval(EvalArgs),
    /// Run the built-in invariant checks.
    Selftest,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory for `traj_NNNN.rgns` files.
    #[arg(long)]
    pub out: PathBuf,
    /// Generator settings (TOML); defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long)]
    pub n_particles: Option<usize>,
    #[arg(long)]
    pub n_steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training settings (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Validation trajectories; the last tenth of `--data` when omitted.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON-lines training log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub trajectory: PathBuf,
    #[arg(long)]
    pub steps: usize,
    /// Start frame (forward default: history length; inverse default: last frame).
    #[arg(long)]
    pub start: Option<usize>,
    /// Output directory for frames and the run manifest.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GoalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Text grid of `.` and `#` rows.
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub steps: usize,
    #[arg(long, default_value_t = 150)]
    pub n_max: usize,
    #[arg(long, default_value_t = 0)]
    pub material: u8,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub rollout_steps: Option<usize>,
    /// Comma-separated consistency horizons.
    #[arg(long, value_delimiter = ',')]
    pub consistency_steps: Option<Vec<usize>>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub struct Globals {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub precision: Option<Precision>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    let g = Globals {
        seed: cli.seed,
        threads: cli.threads,
        precision: cli.precision,
    };
    let result = match cli.command {
        Command::Gen(a) => commands::gen(&g, a),
        Command::Train(a) => commands::train(&g, a),
        Command::Rollout(a) => commands::rollout(&g, a, false),
        Command::Invert(a) => commands::rollout(&g, a, true),
        Command::Goal(a) => commands::goal(&g, a),
        Command::Eval(a) => commands::eval(&g, a),
        Command::Selftest => commands::selftest(&g),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
