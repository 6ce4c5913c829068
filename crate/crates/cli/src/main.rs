use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pint_cli::commands::{self, Overrides};
use pint_cli::config::SamplerAlgo;
use pint_core::Result;

#[derive(Parser)]
#[command(
    name = "pint",
    version,
    about = "Parallel-in-time simulation toolkit for separable Hamiltonian systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (TOML).
    config: PathBuf,
    /// Output directory (overrides [output].dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for parallel sections.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Sequential simulation with per-step metrics.
    Sim(Common),
    /// Parareal run (plain or Procrustes-corrected).
    Parareal(Common),
    /// Generate a training dataset with a phase-space sampler.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Sampling algorithm.
        #[arg(long, value_parser = parse_algo)]
        algo: Option<SamplerAlgo>,
    },
    /// Train the network surrogate on a dataset.
    Train(Common),
    /// Roll out a trained network and report errors.
    EvalNn(Common),
    /// One-step accuracy/runtime table for a list of solvers.
    Bench(Common),
}

fn parse_algo(s: &str) -> std::result::Result<SamplerAlgo, String> {
    match s {
        "hmc" => Ok(SamplerAlgo::Hmc),
        "trajensemble" => Ok(SamplerAlgo::Trajensemble),
        other => Err(format!("unknown algorithm `{other}` (expected hmc|trajensemble)")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    type Cmd = fn(&Path, &Overrides) -> Result<()>;
    let (run, common, algo): (Cmd, &Common, Option<SamplerAlgo>) = match &cli.command {
        Command::Sim(c) => (commands::cmd_simulate, c, None),
        Command::Parareal(c) => (commands::cmd_parareal, c, None),
        Command::Sample { common, algo } => (commands::cmd_sample, common, *algo),
        Command::Train(c) => (commands::cmd_train, c, None),
        Command::EvalNn(c) => (commands::cmd_eval_nn, c, None),
        Command::Bench(c) => (commands::cmd_bench, c, None),
    };
    if let Some(w) = common.workers {
        // size the global pool once; later calls are a no-op
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    let over = Overrides {
        out: common.out.clone(),
        seed: common.seed,
        workers: common.workers,
        algo,
    };
    match run(&common.config, &over) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
