//! Experiment CLI. Exit codes: 0 success, 1 check/run failure, 2 config error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedmezo::harness::{self, SweepAxis};
use fedmezo::Error;

#[derive(Parser)]
#[command(
    name = "fedmezo",
    about = "Deterministic federated zeroth-order fine-tuning simulator",
    after_help = "Set FEDMEZO_WORKERS to bound the worker-thread count; results do not depend on it."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config: metrics.jsonl, timing.jsonl, summary.json.
    Run {
        /// Path to the JSON experiment config.
        config: PathBuf,
    },
    /// Run one experiment per axis value (shared master seed) and merge.
    Sweep {
        config: PathBuf,
        /// Axis: mu | h | n | splitter | lr | strategy.
        #[arg(long)]
        axis: String,
        /// Comma-separated values, e.g. "2e-4,1e-3,5e-3" or
        /// "iid,dirichlet:0.5,meta".
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
    /// Measure constants and evaluate the theory calculators for a config.
    Diagnose {
        config: PathBuf,
    },
    /// Run the self-check suite against the golden files.
    Verify {
        /// Directory holding seeds.json and theory.json.
        #[arg(long, default_value = "goldens")]
        goldens: PathBuf,
    },
    /// Emit tidy plot CSV (round, series, mean, band_lo, band_hi).
    Plot {
        /// Run directory (metrics.jsonl inside) or sweep root directory.
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    harness::init_workers();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn dispatch(command: Command) -> fedmezo::Result<ExitCode> {
    match command {
        Command::Run { config } => {
            let loaded = harness::load_config(&config)?;
            for w in &loaded.warnings {
                eprintln!("warning: {w}");
            }
            let summary = harness::run(&loaded.config, &loaded.warnings)?;
            println!(
                "final loss {:.6e} +/- {:.3e} over {} replicate(s); outputs in {}",
                summary.final_loss_mean,
                summary.final_loss_std,
                summary.replicates,
                loaded.config.output_dir
            );
            if !summary.failed_rounds.is_empty() {
                for f in &summary.failed_rounds {
                    eprintln!("round failure: {f}");
                }
                return Ok(ExitCode::from(1));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep {
            config,
            axis,
            values,
        } => {
            let loaded = harness::load_config(&config)?;
            for w in &loaded.warnings {
                eprintln!("warning: {w}");
            }
            let axis: SweepAxis = axis.parse()?;
            let cells = harness::sweep(&loaded.config, axis, &values)?;
            let mut any_failed = false;
            for cell in &cells {
                match (&cell.final_loss_mean, &cell.error) {
                    (Some(loss), _) => println!("{:>16} -> final loss {loss:.6e}", cell.value),
                    (None, Some(err)) => {
                        any_failed = true;
                        println!("{:>16} -> FAILED: {err}", cell.value);
                    }
                    _ => unreachable!("cell has either a loss or an error"),
                }
            }
            println!("merged CSV: {}/sweep.csv", loaded.config.output_dir);
            Ok(if any_failed {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Diagnose { config } => {
            let loaded = harness::load_config(&config)?;
            let report = harness::diagnose(&loaded.config)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { goldens } => {
            let results = harness::verify(&goldens);
            let mut report = String::new();
            let all_pass = harness::render_report(&results, &mut report);
            print!("{report}");
            Ok(if all_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::Plot { dir } => {
            harness::emit_plot_data(&dir)?;
            println!("wrote {}/plot.csv", dir.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
