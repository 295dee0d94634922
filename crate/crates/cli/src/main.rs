use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lipsfl::config::{parse_config, ExperimentConfig};
use lipsfl::runner;

/// Deterministic federated-learning simulator.
#[derive(Parser)]
#[command(name = "lipsfl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its metrics.
    Run {
        config: PathBuf,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: $LIPSFL_OUTPUT_ROOT/<method>-seed<seed>).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Worker threads for client training.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
}

fn load(path: &Path) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { config } => load(&config).map(|c| {
            println!(
                "{}: ok ({} {}, {} clients, {} rounds)",
                config.display(),
                c.method,
                c.arch,
                c.n_clients,
                c.rounds
            );
        }),
        Command::Run {
            config,
            seed,
            output,
            workers,
        } => load(&config).and_then(|mut c| {
            if let Some(s) = seed {
                c.seed = s;
            }
            if let Some(w) = workers {
                c.parallel_workers = w;
            }
            if output.is_some() {
                c.output_dir = output;
            }
            let dir = runner::run(&c).map_err(|e| e.to_string())?;
            println!("{}", dir.display());
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("lipsfl: {msg}");
            ExitCode::FAILURE
        }
    }
}
