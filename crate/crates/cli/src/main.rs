use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vogn_cli::{run, Command, Overrides};

#[derive(Parser)]
#[command(name = "vogn", version, about = "Train and evaluate natural-gradient VI models")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and write logs, a checkpoint and held-out metrics
    Train(Common),
    /// Evaluate a checkpoint on the held-out split
    Eval(Common),
    /// Out-of-distribution detection against the configured datasets
    Ood(Common),
    /// Train and evaluate across prior variances or MC sample counts
    Sweep(Common),
    /// Permuted-feature continual learning with prior chaining
    Continual(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration
    #[arg(long)]
    config: PathBuf,
    /// Override the root seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the worker count
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (takes precedence over VOGN_OUT_DIR and the config)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match cli.command {
        Cmd::Train(a) => (Command::Train, a),
        Cmd::Eval(a) => (Command::Eval, a),
        Cmd::Ood(a) => (Command::Ood, a),
        Cmd::Sweep(a) => (Command::Sweep, a),
        Cmd::Continual(a) => (Command::Continual, a),
    };
    let ov = Overrides {
        seed: args.seed,
        workers: args.workers,
        out: args.out,
    };
    match run(cmd, &args.config, &ov) {
        Ok(out) => {
            eprintln!("wrote {}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
