use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use k06_cli::{cmd_oracle, cmd_run, cmd_sweep, RunOptions};

#[derive(Parser)]
#[command(
    name = "k06",
    version,
    about = "Three-stage rotation protocol simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (run) or experiment plan (sweep), TOML
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the file
    #[arg(long, env = "K06_SEED")]
    seed: Option<u64>,
    /// Output CSV path; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sessions to run, or trials per sweep cell
    #[arg(long)]
    trials: Option<u64>,
}

impl From<Common> for RunOptions {
    fn from(c: Common) -> Self {
        RunOptions {
            config: c.config,
            seed: c.seed,
            out: c.out,
            trials: c.trials,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its transcript
    Run(Common),
    /// Run an experiment plan and write the result table
    Sweep(Common),
    /// Print the exact stage-2 detection probability
    Oracle {
        #[arg(long)]
        mu: f64,
        /// Fraction Eve siphons before Bob's check
        #[arg(long, default_value_t = 0.0)]
        fraction: f64,
        #[arg(long, default_value_t = 5.0)]
        z: f64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Run(c) => cmd_run(&c.into()),
        Command::Sweep(c) => cmd_sweep(&c.into()),
        Command::Oracle { mu, fraction, z } => cmd_oracle(mu, fraction, z),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
