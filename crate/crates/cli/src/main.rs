use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ecoscale_cli::commands::{self, SplitPart};
use ecoscale_cli::{CliError, RunConfig};

/// Prime-kernel multi-scale 1D convolutional networks: planning, complexity
/// accounting, synthetic data, training and evaluation.
#[derive(Parser)]
#[command(name = "ecoscale", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the kernel plan for a cover length or a stage hierarchy.
    Plan {
        /// Cover length of a single stage.
        #[arg(long, conflicts_with = "initial_cover")]
        length: Option<usize>,
        /// Cover length at the first stage.
        #[arg(long)]
        initial_cover: Option<usize>,
        /// Cumulative downsampling factor of each stage, starting at 1.
        #[arg(long, value_delimiter = ',', requires = "initial_cover")]
        factors: Option<Vec<usize>>,
        /// Raise p_k until every length up to the stage cover is reachable.
        #[arg(long, default_value_t = false)]
        strict: bool,
    },
    /// Parameter, MAC and FLOP counts for the configured model.
    Analyze {
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Input length to count at [default: model.input_length].
        #[arg(long)]
        input_length: Option<usize>,
        /// Write the per-layer report as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the synthetic dataset described by [data].
    GenData {
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Dataset file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the configured model and save its weights.
    Train {
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Dataset file written by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Weights file to write.
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch CSV log [default: <out>.log.csv].
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score saved weights on one part of the configured split.
    Eval {
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Weights file written by train.
        #[arg(long)]
        weights: PathBuf,
        /// Dataset file written by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Probability at or above which a label is predicted.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// train, val, test or all.
        #[arg(long, default_value = "test")]
        split: SplitPart,
        /// Write the metrics CSV here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Win counts and average ranks over a directory of metrics CSVs.
    Report {
        /// Directory holding NAME.csv or NAME.TASK.csv metrics files.
        #[arg(long)]
        runs: PathBuf,
        /// Write the win/rank table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Plan {
            length,
            initial_cover,
            factors,
            strict,
        } => commands::plan(length, initial_cover, factors.as_deref(), strict),
        Command::Analyze {
            config,
            input_length,
            out,
        } => commands::analyze(&RunConfig::load(&config)?, input_length, out.as_deref()),
        Command::GenData { config, out } => commands::gen_data(&RunConfig::load(&config)?, &out),
        Command::Train {
            config,
            data,
            out,
            log,
        } => commands::train(&RunConfig::load(&config)?, &data, &out, log.as_deref()),
        Command::Eval {
            config,
            weights,
            data,
            threshold,
            split,
            out,
        } => commands::eval(
            &RunConfig::load(&config)?,
            &weights,
            &data,
            threshold,
            split,
            out.as_deref(),
        ),
        Command::Report { runs, out } => commands::report(&runs, out.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(text) => {
            print!("{text}");
            if !text.ends_with('\n') {
                println!();
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
