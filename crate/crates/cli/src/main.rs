//! Single-binary front end. Every subcommand is deterministic given the same
//! inputs, flags, and seed; resolved settings are echoed into each report.

use clap::Parser;

mod args;
mod commands;

use args::{Cli, Command};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_UNSOLVABLE: i32 = 4;
pub const EXIT_FALLBACK: i32 = 5;

/// Failure with its contractual exit code: usage problems exit 2, broken
/// input data 3, systems without a usable solution 4. The all-tiles-rejected
/// fallback is not an error (the report still gets written); commands signal
/// it by returning `Ok(EXIT_FALLBACK)`.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(hdrstack::Error),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) => match e {
                hdrstack::Error::Unsolvable(_) | hdrstack::Error::Disconnected { .. } => {
                    EXIT_UNSOLVABLE
                }
                _ => EXIT_DATA,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => f.write_str(msg),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<hdrstack::Error> for CliError {
    fn from(e: hdrstack::Error) -> Self {
        CliError::Core(e)
    }
}

fn main() {
    let cli = Cli::parse();
    std::process::exit(run(cli));
}

fn run(cli: Cli) -> i32 {
    let config = match args::load_config(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => return report_failure(&e),
    };
    if let Some(n) = cli.threads.or(config.threads) {
        if n == 0 {
            return report_failure(&CliError::Usage("--threads must be at least 1".into()));
        }
        // One global pool for the whole invocation. Results are independent
        // of its size, only wall time changes.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = match cli.command {
        Command::Estimate(a) => commands::cmd_estimate(a, &config),
        Command::Merge(a) => commands::cmd_merge(a, &config),
        Command::Simulate(a) => commands::cmd_simulate(a, &config),
        Command::Evaluate(a) => commands::cmd_evaluate(a, &config),
    };
    match result {
        Ok(code) => code,
        Err(e) => report_failure(&e),
    }
}

fn report_failure(e: &CliError) -> i32 {
    eprintln!("error: {e}");
    e.code()
}
