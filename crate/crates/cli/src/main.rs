use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use otflow_cli::{Command, Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "otflow",
    version,
    about = "Optimal transport couplings by particle gradient flow"
)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Evolve a two-marginal particle system towards the optimal coupling.
    Transport(RunArgs),
    /// Approximate the Wasserstein barycenter of several marginals.
    Barycenter(RunArgs),
    /// Write displacement-interpolated point clouds from a coupling.
    Interpolate(RunArgs),
    /// Compare a coupling against exact oracles.
    Diagnose(RunArgs),
    /// Print a gnuplot script for the outputs of a command.
    PlotScript {
        #[arg(value_enum)]
        kind: PlotKind,
        /// Dimension of the data.
        #[arg(long, default_value_t = 1)]
        dim: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `solver.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all available cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides `output`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotKind {
    Transport,
    Barycenter,
    Interpolate,
}

fn execute(command: Command, args: &RunArgs) -> Result<()> {
    let overrides = Overrides {
        seed: args.seed,
        output: args.out.clone(),
    };
    let cfg = RunConfig::load(&args.config, command, &overrides)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = args.threads {
        anyhow::ensure!(k > 0, "--threads must be at least 1");
        pool = pool.num_threads(k);
    }
    let pool = pool.build().context("building the thread pool")?;
    let outcome = pool.install(|| otflow_cli::run(&cfg, &mut std::io::stdout()))?;
    std::io::stdout().flush()?;
    for f in &outcome.files {
        log::info!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Sub::Transport(a) => execute(Command::Transport, a),
        Sub::Barycenter(a) => execute(Command::Barycenter, a),
        Sub::Interpolate(a) => execute(Command::Interpolate, a),
        Sub::Diagnose(a) => execute(Command::Diagnose, a),
        Sub::PlotScript { kind, dim } => {
            let c = match kind {
                PlotKind::Transport => Command::Transport,
                PlotKind::Barycenter => Command::Barycenter,
                PlotKind::Interpolate => Command::Interpolate,
            };
            print!("{}", otflow_cli::plot::script(c, *dim));
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
