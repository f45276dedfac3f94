//! `causal-mosaic`: data generation, training, inference and the desk-scale
//! experiments. Logs go to stderr, results to stdout and `--out`.
//!
//! Exit codes: 0 success or a decided direction, 2 undecided, 1 error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "causal-mosaic", version, about = "Cause-effect inference with nonlinear ICA tesserae")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// TOML configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write synthetic pairs sharing one mixing function.
    Gen {
        /// Number of pairs.
        #[arg(long, default_value_t = 10)]
        pairs: usize,
    },
    /// Train one feature extractor on a directory of labeled pairs.
    Train {
        /// Directory with pairNNNN.txt files and pairmeta.txt.
        data: PathBuf,
    },
    /// Infer the direction of one two-column data file.
    Infer {
        data: PathBuf,
        /// Model file written by `train`.
        #[arg(long, conflicts_with = "pool", required_unless_present = "pool")]
        model: Option<PathBuf>,
        /// Pool file written by `ensemble` or `experiment-tcep`.
        #[arg(long)]
        pool: Option<PathBuf>,
        /// rule1, rule2 or thresholded (model only).
        #[arg(long, default_value = "rule1")]
        rule: String,
        /// dcor or hsic (model only).
        #[arg(long, default_value = "dcor")]
        measure: String,
    },
    /// Run the artificial-data grid.
    ExperimentArtificial,
    /// Ensemble evaluation with threshold search over a benchmark directory.
    ExperimentTcep(DatasetArgs),
    /// Train and evaluate a tessera pool and decide every pair.
    Ensemble(DatasetArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DatasetArgs {
    /// Benchmark directory (pairNNNN.txt and pairmeta.txt).
    pub dir: Option<PathBuf>,
    /// Use a synthetic labeled benchmark of this many pairs instead.
    #[arg(long, conflicts_with = "dir")]
    pub pseudo: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
