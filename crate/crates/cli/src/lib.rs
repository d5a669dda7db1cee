//! Command-line front end of `butterfly-core`.
//!
//! Exit status: 0 when every requested check passes, 1 when a check fails,
//! 2 on usage, configuration or runtime errors.

pub mod args;
pub mod commands;
pub mod config;
pub mod report;

use std::process::ExitCode;

use anyhow::Result;

pub use args::{Cli, Command, CommonArgs};
pub use config::{RunConfig, Settings};

/// Outcome of a subcommand that ran to completion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    ChecksFailed,
}

impl Outcome {
    pub fn from_pass(pass: bool) -> Self {
        if pass {
            Outcome::Pass
        } else {
            Outcome::ChecksFailed
        }
    }

    pub fn exit_code(self) -> ExitCode {
        match self {
            Outcome::Pass => ExitCode::SUCCESS,
            Outcome::ChecksFailed => ExitCode::from(1),
        }
    }
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let settings = Settings::resolve(&cli.common)?;
    std::fs::create_dir_all(&settings.out)?;
    match &cli.command {
        Command::Synth { rank, complex } => commands::synth(&settings, *rank, *complex),
        Command::Factorize { max_error } => commands::factorize(&settings, *max_error),
        Command::Verify { butterfly } => commands::verify(&settings, butterfly.as_deref()),
        Command::Bench => commands::bench(&settings),
        Command::Comm {
            kinds,
            ranks,
            procs,
            depths,
            simulate,
            alpha,
            beta,
        } => commands::comm(
            &settings,
            &commands::CommGrid {
                kinds: kinds.clone(),
                ranks: ranks.clone(),
                procs: procs.clone(),
                depths: depths.clone(),
                simulate: *simulate,
                time_model: alpha.zip(*beta),
            },
        ),
    }
}
