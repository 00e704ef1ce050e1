mod commands;
mod config;
mod error;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gsmdet_core::FeatureMode;

use config::{Overrides, RunConfig};
use error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "gsmdet", version, about = "Generalized spatial modulation MIMO detection simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the block-DNN sub-networks and write a model bundle.
    Train(TrainArgs),
    /// Monte Carlo BER sweep over an SNR grid.
    Sweep(SweepArgs),
    /// Real-valued multiply-accumulate count per detection.
    Complexity(ComplexityArgs),
}

#[derive(Args, Debug, Default)]
struct Common {
    /// TOML run configuration; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    n_tx: Option<usize>,
    #[arg(long)]
    n_rx: Option<usize>,
    #[arg(long)]
    n_active: Option<usize>,
    /// bpsk, qpsk, 16qam, ...
    #[arg(long)]
    modulation: Option<String>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Features {
    Absolute,
    Signed,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Bundle directory (default: <out>/model).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Training rows per sub-network.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Feature encoding of the complex inputs.
    #[arg(long, value_enum)]
    features: Option<Features>,
    /// Train on noisy receptions at this SNR in dB.
    #[arg(long, allow_negative_numbers = true)]
    train_snr: Option<f64>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// start:step:stop in dB.
    #[arg(long, allow_hyphen_values = true)]
    snr: Option<String>,
    #[arg(long)]
    slots: Option<usize>,
    /// Comma-separated list: ML, B-ZF, B-MMSE, B-DNN.
    #[arg(long, value_delimiter = ',')]
    detectors: Option<Vec<String>>,
    /// Trained bundle directory, needed for B-DNN.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Skip the SVG plot.
    #[arg(long)]
    no_plot: bool,
}

#[derive(Args, Debug)]
struct ComplexityArgs {
    #[command(flatten)]
    common: Common,
    /// Take the B-DNN layout from this bundle.
    #[arg(long)]
    model: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            threads: self.threads,
            n_tx: self.n_tx,
            n_rx: self.n_rx,
            n_active: self.n_active,
            modulation: self.modulation.clone(),
            hidden: self.hidden.clone(),
            ..Default::default()
        }
    }
}

fn setup_threads(cfg: &RunConfig) -> CliResult<()> {
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let (common, overrides) = match &cli.command {
        Command::Train(a) => (
            &a.common,
            Overrides {
                model: a.model.clone(),
                samples: a.samples,
                epochs: a.epochs,
                batch: a.batch,
                lr: a.lr,
                features: a.features.map(|f| match f {
                    Features::Absolute => FeatureMode::Absolute,
                    Features::Signed => FeatureMode::Signed,
                }),
                train_snr_db: a.train_snr,
                ..a.common.overrides()
            },
        ),
        Command::Sweep(a) => (
            &a.common,
            Overrides {
                snr: a.snr.clone(),
                slots: a.slots,
                detectors: a.detectors.clone(),
                model: a.model.clone(),
                no_plot: a.no_plot,
                ..a.common.overrides()
            },
        ),
        Command::Complexity(a) => (&a.common, Overrides { model: a.model.clone(), ..a.common.overrides() }),
    };
    let cfg = RunConfig::resolve(common.config.as_deref(), &overrides)?;
    setup_threads(&cfg)?;
    match cli.command {
        Command::Train(_) => commands::train(cfg),
        Command::Sweep(_) => commands::sweep(cfg),
        Command::Complexity(_) => commands::complexity(cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
