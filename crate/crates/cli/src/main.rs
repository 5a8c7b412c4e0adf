use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pdenetpp::cli::{run, Command, Invocation};

#[derive(Parser)]
#[command(name = "pdenetpp", version, about = "Hybrid PDE surrogate experiments")]
struct Args {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate training and test datasets
    Generate(Common),
    /// Fit a model to the noisy training set
    Train(Common),
    /// Roll out a checkpoint over the test set
    Evaluate(Common),
    /// Export one rollout as tensors and PGM frames
    Rollout(Common),
    /// Run the 1-D advection scheme demos
    Schemes(Common),
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

fn threads_from_env() -> Result<Option<usize>, String> {
    match std::env::var("PDENETPP_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!("PDENETPP_THREADS must be a positive integer, got {v:?}")),
        },
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match threads_from_env() {
        Ok(Some(n)) => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        }
        Ok(None) => {}
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let (cmd, common) = match args.command {
        Cmd::Generate(c) => (Command::Generate, c),
        Cmd::Train(c) => (Command::Train, c),
        Cmd::Evaluate(c) => (Command::Evaluate, c),
        Cmd::Rollout(c) => (Command::Rollout, c),
        Cmd::Schemes(c) => (Command::Schemes, c),
    };
    let result = Invocation::load(&common.config, common.out.as_deref(), common.seed).and_then(|inv| run(cmd, &inv));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
