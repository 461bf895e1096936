use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use subsurr::cli::{self, Common};

#[derive(Parser)]
#[command(name = "subsurr", version, about = "Learned interface surrogates for substructured finite element models")]
struct Args {
    /// Seed for training and random draws (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the training trajectories and store interface snapshots.
    Generate { config: PathBuf },
    /// Compute POD bases from a snapshot file.
    Pod { config: PathBuf },
    /// Fit one model form at one basis size.
    Train { config: PathBuf },
    /// Coupled solves of the test trajectories with a given closure.
    Solve { config: PathBuf },
    /// Compare model forms over basis sizes.
    Study { config: PathBuf },
    /// Model-class checks on the 1D bar.
    Analyze1d { config: Option<PathBuf> },
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { cli::EXIT_USAGE as u8 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("SUBSURR_LOG", "error")).init();
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(cli::EXIT_USAGE as u8);
        }
    }
    let common = Common {
        seed: args.seed,
        out: args.out,
    };
    let result = match &args.command {
        Command::Generate { config } => cli::cmd_generate(config, &common),
        Command::Pod { config } => cli::cmd_pod(config, &common),
        Command::Train { config } => cli::cmd_train(config, &common),
        Command::Solve { config } => cli::cmd_solve(config, &common),
        Command::Study { config } => cli::cmd_study(config, &common),
        Command::Analyze1d { config } => cli::cmd_analyze1d(config.as_deref(), &common),
    };
    match result {
        Ok(m) => {
            for (k, v) in &m.summary {
                println!("{k}: {v}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
