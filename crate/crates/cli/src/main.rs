//! `meshgnn`: generate topologies, simulate traffic, train and evaluate routing models.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "meshgnn", version, about = "GNN routing lab for simulated microservice meshes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration file (JSON, or TOML with a .toml extension). Defaults apply when omitted.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Root under which the run directory is created.
    #[arg(long, value_name = "DIR", default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    StaticShortest,
    RoundRobin,
    LeastConnections,
    Random,
    Oracle,
    /// A trained model, given by --model.
    Gnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WorkloadArg {
    Collect,
    Evaluate,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the configured topology and write it as graph JSON.
    Topogen {
        #[command(flatten)]
        common: Common,
        /// Topology spec file with the generator's fields; replaces the configured topology.
        #[arg(long, value_name = "FILE")]
        spec: Option<PathBuf>,
    },
    /// Run one policy over a workload and write the trace, samples and metrics.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Graph JSON to simulate instead of the configured topology.
        #[arg(long, value_name = "FILE")]
        graph: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "random")]
        policy: PolicyArg,
        /// Model snapshot for --policy gnn.
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "evaluate")]
        workload: WorkloadArg,
    },
    /// Collect samples under random routing and train a model.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a model and every baseline on the held-out workload.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Model snapshot; a model is trained from the configuration when omitted.
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
    },
    /// Accuracy and error against the number of message-passing layers.
    SweepDepth {
        #[command(flatten)]
        common: Common,
        /// Comma-separated layer counts.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<usize>>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Accuracy and error against the average out-degree of generated topologies.
    SweepDensity {
        #[command(flatten)]
        common: Common,
        /// Comma-separated average out-degrees.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Compare analytic and finite-difference gradients of the training loss.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        instances: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
