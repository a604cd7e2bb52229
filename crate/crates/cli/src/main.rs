use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trace_core::Error;

mod commands;

#[derive(Parser, Debug)]
#[command(
    name = "trace",
    version,
    about = "Conformal prediction regions from diffusion and flow-matching scores"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Experiment configuration (JSON); unspecified fields take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Use the 30k-sample, 20-seed, large-network protocol.
    #[arg(long, global = true)]
    pub full_scale: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate or load the dataset for each seed and write it with its metadata.
    GenData,
    /// Train the models the configured methods need and write checkpoints and banks.
    Train,
    /// Score the calibration split and write thresholds and scores.
    Calibrate,
    /// Coverage and region volume on the test split with the trained models.
    Eval,
    /// Monte Carlo budget ablation.
    Ablate {
        /// Budget grid as `TxR` pairs, e.g. `8x1,8x2,8x4`.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<String>>,
    },
    /// Discretization and threshold-stability bounds; exits 2 when a bound is violated.
    TheoryCheck {
        /// Only run the analytic discretization check.
        #[arg(long)]
        skip_threshold: bool,
    },
    /// Aggregate evaluation results into CSV and JSON tables.
    Report {
        /// Run the whole pipeline in memory instead of reading saved evaluations.
        #[arg(long)]
        run: bool,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) => 3,
        Error::Io { .. } => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = commands::load_config(&cli.global).and_then(|cfg| match cli.command {
        Command::GenData => commands::gen_data(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Calibrate => commands::calibrate(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::Ablate { grid } => commands::ablate(&cfg, grid.as_deref()),
        Command::TheoryCheck { skip_threshold } => commands::theory_check(&cfg, skip_threshold),
        Command::Report { run } => commands::report(&cfg, run),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
