use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use trip_cli::{commands, io_err, load_config, CliError};

#[derive(Parser)]
#[command(name = "trip", version, about = "Decentralized FL contribution simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its traces.
    Simulate(Args),
    /// Compare contributions with exact re-execution Shapley values.
    Shapley(Args),
    /// Retrain after removing the highest, lowest or random clients.
    Removal(Args),
    /// Correlate contributions with data quantity or quality.
    Correlation(Args),
    /// Group contributions under dishonest behavior.
    Dishonest(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to every core.
    #[arg(long)]
    workers: Option<usize>,
}

fn run(command: &Command) -> Result<(), CliError> {
    let (Command::Simulate(a)
    | Command::Shapley(a)
    | Command::Removal(a)
    | Command::Correlation(a)
    | Command::Dishonest(a)) = command;
    let cfg = load_config(&a.config, a.seed)?;
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.workers.unwrap_or(0))
        .build()
        .map_err(|e| trip_core::Error::InvalidConfig(e.to_string()))?;
    let out = a.out.as_path();
    pool.install(|| match command {
        Command::Simulate(_) => commands::simulate(&cfg, out),
        Command::Shapley(_) => commands::shapley(&cfg, out),
        Command::Removal(_) => commands::removal(&cfg, out),
        Command::Correlation(_) => commands::correlation_cmd(&cfg, out),
        Command::Dishonest(_) => commands::dishonest_cmd(&cfg, out),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
