use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use curvzo_cli::commands::{cmd_resume, cmd_run, cmd_sweep};
use curvzo_cli::verify::{cmd_verify, Suite, VerifyOptions};
use curvzo_cli::CliError;

#[derive(Parser)]
#[command(name = "curvzo", version, about = "Curvature-guided sparse zeroth-order optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config, writing metrics, checkpoints and summaries.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "CURVZO_OUT")]
        out: Option<PathBuf>,
        /// Overrides `run.seeds`, e.g. `0,1,2`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Continue the runs in an output directory from their newest checkpoints.
    Resume {
        #[arg(long, env = "CURVZO_OUT")]
        out: PathBuf,
        /// Defaults to the config saved in the output directory.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Run oracle checks; exits 3 if any fails.
    Verify {
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1_000_000)]
        samples: u64,
    },
    /// Run one config per value of a dotted key and tabulate the results.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Dotted key, e.g. `optimizer.mode` or `budget.fraction`.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, env = "CURVZO_OUT")]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
}

fn print_json<T: serde::Serialize>(items: &[T]) {
    for item in items {
        println!("{}", serde_json::to_string(item).expect("serializes"));
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out, seeds } => print_json(&cmd_run(&config, out, seeds)?),
        Command::Resume { out, config, seeds } => print_json(&cmd_resume(&out, config.as_deref(), seeds)?),
        Command::Verify { suite, seed, samples } => {
            let opts = VerifyOptions {
                seed,
                samples,
                ..VerifyOptions::default()
            };
            let records = cmd_verify(suite, &opts)?;
            print_json(&records);
            let failed: Vec<&str> = records.iter().filter(|r| !r.pass).map(|r| r.check.as_str()).collect();
            if !failed.is_empty() {
                return Err(CliError::Verification(failed.join(", ")));
            }
        }
        Command::Sweep { config, axis, values, out, seeds } => {
            let rows = cmd_sweep(&config, &axis, &values, out, seeds)?;
            println!("{}", curvzo_cli::commands::SWEEP_HEADER);
            for r in rows {
                println!("{}", r.csv_line());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
