use clap::{Parser, Subcommand};
use hpkm_pinn::harness::{self, Overrides};
use hpkm_pinn::networks::SKind;
use std::path::PathBuf;

/// Solve multiscale PDE benchmarks with windowed local networks that blend
/// an MLP branch and a Fourier-KAN branch through a trainable weight.
#[derive(Parser)]
#[command(name = "hpkm-pinn", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// Experiment config file (flat `key = value` format).
    config: PathBuf,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed (overrides `train.seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Iteration budget (overrides `train.budget`).
    #[arg(long)]
    budget: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write its artifacts.
    Run(Common),
    /// Train once per S-shaped weighting function with a shared seed.
    SweepSshape {
        #[command(flatten)]
        common: Common,
        /// Comma-separated kinds (default: all seven).
        #[arg(long, value_delimiter = ',')]
        kinds: Option<Vec<SKind>>,
    },
    /// Train mlp_only, kan_only and hpkm on identical layouts and seeds.
    CompareArch(Common),
}

impl Common {
    fn overrides(&self, kinds: Option<Vec<SKind>>) -> Overrides {
        Overrides {
            out: self.out.clone(),
            seed: self.seed,
            budget: self.budget,
            kinds,
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(c) => harness::run(&c.config, &c.overrides(None)).map(|_| ()),
        Command::SweepSshape { common, kinds } => {
            harness::sweep_sshape(&common.config, &common.overrides(kinds.clone())).map(|_| ())
        }
        Command::CompareArch(c) => {
            harness::compare_architectures(&c.config, &c.overrides(None)).map(|_| ())
        }
    };
    if let Err(e) = outcome {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
