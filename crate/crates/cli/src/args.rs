use std::path::PathBuf;

use butterfly_core::layout::LayoutKind;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "bfly", version, about = "Matrix-free randomized butterfly factorization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Clone, Debug, Default, Args)]
pub struct CommonArgs {
    /// Run configuration (JSON, or TOML with a .toml extension).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Relative truncation tolerance.
    #[arg(long, global = true, value_name = "F")]
    pub eps: Option<f64>,
    /// Tree depth.
    #[arg(long = "L", global = true, value_name = "N")]
    pub levels: Option<usize>,
    /// Initial rank guess of the leaf phases.
    #[arg(long, global = true, value_name = "N")]
    pub r0: Option<usize>,
    /// Oversampling of every probe.
    #[arg(long, global = true, value_name = "N")]
    pub oversample: Option<usize>,
    /// Largest matrix dimension allowed for dense checks.
    #[arg(long, global = true, value_name = "N")]
    pub dense_cap: Option<usize>,
    /// CSV output path.
    #[arg(long, global = true, value_name = "PATH")]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write an exact synthetic butterfly and its manifest.
    Synth {
        /// Constant block rank (1..=8).
        #[arg(long)]
        rank: Option<usize>,
        /// Complex instead of real entries.
        #[arg(long)]
        complex: bool,
    },
    /// Reconstruct a butterfly from black-box products.
    Factorize {
        /// Fail (exit 1) when the estimated relative error exceeds this.
        #[arg(long, value_name = "F")]
        max_error: Option<f64>,
    },
    /// Check the level-wise projection bounds against the dense operator.
    Verify {
        /// Check a stored factorization instead of computing one.
        #[arg(long, value_name = "PATH")]
        butterfly: Option<PathBuf>,
    },
    /// Scaling sweep over sizes, depths and tolerances.
    Bench,
    /// Communication model over a grid of layouts, depths, ranks and process counts.
    Comm {
        /// Layout kinds (default: all).
        #[arg(long, value_delimiter = ',')]
        kinds: Vec<LayoutKind>,
        /// Constant ranks (default: 8).
        #[arg(long = "r", value_delimiter = ',')]
        ranks: Vec<usize>,
        /// Process counts (default: every power of two up to 2^L).
        #[arg(long = "p", value_delimiter = ',')]
        procs: Vec<usize>,
        /// Depths (default: --L, else 4,6,8).
        #[arg(long = "levels", value_delimiter = ',')]
        depths: Vec<usize>,
        /// Cross-check every row with a simulated parallel apply.
        #[arg(long)]
        simulate: bool,
        /// Per-message latency for the time column, seconds.
        #[arg(long, requires = "beta")]
        alpha: Option<f64>,
        /// Per-scalar transfer time for the time column, seconds.
        #[arg(long, requires = "alpha")]
        beta: Option<f64>,
    },
}
