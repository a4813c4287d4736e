mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use xbar_core::remap::Strategy;
use xbar_core::Error;

#[derive(Debug, Parser)]
#[command(name = "xbar", version, about = "Crossbar non-ideality simulation and column remapping pipeline")]
struct Cli {
    /// TOML experiment config; built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Top-level seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory holding every artifact.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Built-in technology (TaOx, PCM, Ag/Si), overriding the config.
    #[arg(long, global = true)]
    technology: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the circuit campaign and fit the per-column error model.
    Fit,
    /// Train the desk CNN on the digits data and write the splits.
    Train,
    /// Map trained weights onto crossbar tiles.
    Map,
    /// Choose a column assignment for every layer.
    Remap {
        #[arg(long, value_enum)]
        strategy: StrategyArg,
    },
    /// Test-split accuracy of a mapped network.
    Eval {
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long, value_enum, default_value = "naive")]
        strategy: StrategyArg,
        /// Noise seeds for statistical mode.
        #[arg(long, default_value_t = 5)]
        noise_seeds: usize,
    },
    /// Collect clean, naive, SRS and DRS accuracies into report.csv.
    Report,
    /// Write one layer's tiles as CSV.
    Dump {
        #[arg(long)]
        layer: usize,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    Naive,
    Srs,
    Drs,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Naive => Strategy::Naive,
            StrategyArg::Srs => Strategy::Srs,
            StrategyArg::Drs => Strategy::Drs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Ideal,
    Statistical,
    FullCircuit,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Numeric(_) => 3,
        Error::MissingArtifact { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = commands::Context::open(cli.config.as_deref(), cli.seed, cli.technology.as_deref(), &cli.out)
        .and_then(|mut ctx| {
            match cli.command {
                Command::Fit => ctx.fit(),
                Command::Train => ctx.train(),
                Command::Map => ctx.map(),
                Command::Remap { strategy } => ctx.remap(strategy.into()),
                Command::Eval {
                    mode,
                    strategy,
                    noise_seeds,
                } => ctx.eval(mode, strategy.into(), noise_seeds),
                Command::Report => ctx.report(),
                Command::Dump { layer } => ctx.dump(layer),
            }?;
            ctx.finish()
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
