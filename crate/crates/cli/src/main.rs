// SPDX-License-Identifier: MIT OR Apache-2.0

//! `capattn`: generate planted models and corpora, analyze attention,
//! search caption queries, probe heads, evaluate and sweep interventions.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Debug, Parser)]
#[command(
    name = "capattn",
    version,
    about = "Caption-sensitive attention intervention toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the model and corpora and write them out.
    Gen(Common),
    /// Head-wise and layer-wise visual attention change rates.
    Analyze(Common),
    /// Rank caption query candidates by attention shift.
    SearchQuery {
        #[command(flatten)]
        common: Common,
        /// Score signed differences instead of absolute ones.
        #[arg(long)]
        signed: bool,
    },
    /// Probe every head and write the probe artifact.
    Probe(Common),
    /// Evaluate baseline and intervened accuracy.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        artifact: ArtifactArg,
    },
    /// Evaluate every (alpha, K) pair of a grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        artifact: ArtifactArg,
        /// Comma-separated alpha values.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        alpha_grid: Option<Vec<f64>>,
        /// Comma-separated K values.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        k_grid: Option<Vec<i64>>,
    },
    /// Search, probe and evaluate in one run.
    Pipeline(Common),
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// JSON run configuration; defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    top_k: Option<i64>,
    /// Output directory; falls back to the config's, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where shifts are added.
    #[arg(long, value_enum)]
    positions: Option<Positions>,
}

#[derive(Debug, Clone, Args)]
struct ArtifactArg {
    /// Existing probe artifact; probed inline when absent.
    #[arg(long)]
    probe_artifact: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Positions {
    LastToken,
    AllPositions,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let argv: Vec<String> = std::iter::once("capattn".to_owned())
        .chain(std::env::args().skip(1))
        .collect();
    match commands::run(cli.command, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
