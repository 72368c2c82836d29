//! Pipeline driver: dataset generation, graybox training, pulse control,
//! evaluation, and report emission, driven by named profiles.
//!
//! Exit codes are stable: 0 success, 2 configuration error, 3 data error
//! (bad files, hash mismatches), 4 usage error, 5 missing artifacts.

mod commands;

use gbx_cli::profiles;

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "gbx", version, about = "Graybox qubit-noise modeling and pulse control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Built-in profile name or path to a profile JSON file.
    #[arg(long, global = true)]
    profile: Option<String>,
    /// Override the profile's seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: runs/<profile-name>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Cap the number of worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/test datasets and a manifest.
    GenData,
    /// Train the graybox model on a generated dataset.
    Train {
        /// Directory holding train.jsonl / test.jsonl (default: the run dir).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Optimize control pulses for target gates with a trained model.
    Control {
        /// Model file (default: <run dir>/model.gbx.json).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Comma-separated gate names or "all" (I,X,Y,Z,H,RX_PI4).
        #[arg(long, default_value = "all")]
        gates: String,
        /// gd, ga, or both.
        #[arg(long, default_value = "gd")]
        optimizer: String,
    },
    /// Evaluate a trained model on a dataset file.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Consolidate one or more completed runs into summary tables.
    Report {
        /// A run directory or a directory of run directories.
        run_dir: PathBuf,
    },
    /// List built-in profiles.
    Profiles,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Data(String),
    Missing(Vec<String>),
    Other(anyhow::Error),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 4,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Missing(_) => 5,
            CliError::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Config(m) => write!(f, "configuration: {m}"),
            CliError::Data(m) => write!(f, "data: {m}"),
            CliError::Missing(files) => {
                writeln!(f, "missing artifacts:")?;
                for file in files {
                    writeln!(f, "  {file}")?;
                }
                Ok(())
            }
            CliError::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Other(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.into())
    }
}

fn main() {
    let code = match run() {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}

fn run() -> Result<(), CliError> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return Ok(());
            }
            return Err(CliError::Usage(e.to_string()));
        }
    };
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }

    let ctx = commands::Context { profile: cli.profile, seed: cli.seed, out: cli.out };
    match cli.command {
        Command::GenData => commands::gen_data::run(&ctx),
        Command::Train { data } => commands::train::run(&ctx, data),
        Command::Control { model, gates, optimizer } => {
            commands::control::run(&ctx, model, &gates, &optimizer)
        }
        Command::Evaluate { model, data } => commands::evaluate::run(&model, &data),
        Command::Report { run_dir } => commands::report::run(&run_dir),
        Command::Profiles => {
            for p in profiles::builtin_profiles() {
                println!(
                    "{:40} M={:5} train/test {}/{} hidden {:?}",
                    p.name, p.data.lab.steps, p.n_train, p.n_test, p.hidden
                );
            }
            Ok(())
        }
    }
}
