//! `ufts`: fit Bayesian functional time-series models to size-resolved
//! ultrafine-particle count data, and summarize the results.

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use ufts_cli::commands::{self, DiagnoseArgs, DicArgs, FitArgs, SimulateArgs, SummarizeArgs};

#[derive(Parser)]
#[command(
    name = "ufts",
    version,
    about = "Bayesian random-effect functional time-series models for \
             size-resolved ultrafine-particle counts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_knot(value: &str) -> Result<i32, String> {
    match value {
        "8" => Ok(8),
        "10" => Ok(10),
        "12" => Ok(12),
        other => Err(format!("knot must be 8, 10 or 12, got {other}")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a desk-scale dataset from known truth parameters.
    Simulate {
        /// Output directory for data.csv and truth.txt.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Trend variant, e.g. jump-quadratic or random-jump-bent10.
        #[arg(long, default_value = "random-jump-quadratic")]
        variant: String,
        /// Bent-line knot time.
        #[arg(long, value_parser = parse_knot)]
        knot: Option<i32>,
    },
    /// Fit the model by MCMC and write draw files plus a text report.
    Fit {
        /// Run configuration file (key = value lines).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the configured trend variant.
        #[arg(long)]
        variant: Option<String>,
        /// Override the bent-line knot time.
        #[arg(long, value_parser = parse_knot)]
        knot: Option<i32>,
        /// Fit all eight fixed variants plus the four random-jump variants.
        #[arg(long)]
        sweep: bool,
    },
    /// Emit predictive curves, trend components, mode trajectories, the
    /// variance curve and residual grids from stored draws.
    Summarize {
        #[arg(long)]
        config: PathBuf,
        /// Directory holding chain-*.csv draw files.
        #[arg(long)]
        draws: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Prediction times (comma separated minutes), defaults to the
        /// configured predict_times.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        times: Option<Vec<i32>>,
    },
    /// DIC comparison table over one or more fitted draws directories.
    Dic {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        draws: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Residual profile data per size bin.
    Diagnose {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        draws: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Size bins to profile (comma separated), default every tenth bin.
        #[arg(long, value_delimiter = ',')]
        bins: Option<Vec<usize>>,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate {
            out,
            seed,
            variant,
            knot,
        } => commands::cmd_simulate(&SimulateArgs {
            out,
            seed,
            variant,
            knot,
        }),
        Command::Fit {
            config,
            seed,
            chains,
            out,
            variant,
            knot,
            sweep,
        } => commands::cmd_fit(&FitArgs {
            config,
            seed,
            chains,
            out,
            variant,
            knot,
            sweep,
        }),
        Command::Summarize {
            config,
            draws,
            out,
            times,
        } => commands::cmd_summarize(&SummarizeArgs {
            config,
            draws,
            out,
            times,
        }),
        Command::Dic { config, draws, out } => commands::cmd_dic(&DicArgs { config, draws, out }),
        Command::Diagnose {
            config,
            draws,
            out,
            bins,
        } => commands::cmd_diagnose(&DiagnoseArgs {
            config,
            draws,
            out,
            bins,
        }),
    }
}
