use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ptychodv::harness::{self, ExperimentConfig, Scenario};
use ptychodv::metrics::MetricReport;
use ptychodv::train::Preset;

/// Ptychographic reconstruction experiments.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML file layered over the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for data and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "desk")]
    preset: Preset,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Simulate the test set.
    Simulate,
    /// Train the network.
    Train,
    /// Reconstruct one sample per probe and pattern with every method.
    Reconstruct,
    /// Score every method on the test set.
    Evaluate,
    /// Compare PMACE from the baseline and from the network output.
    InitializerStudy,
}

fn print_rows(rows: &[MetricReport]) {
    for r in rows {
        println!("{:<28} {:<6} {}", r.method, r.pattern, r.formatted());
    }
}

fn run(cli: Cli) -> ptychodv::Result<()> {
    let scenario = match cli.command {
        Command::Simulate => Scenario::Simulate,
        Command::Train => Scenario::Train,
        Command::Reconstruct => Scenario::Reconstruct,
        Command::Evaluate => Scenario::Evaluate,
        Command::InitializerStudy => Scenario::InitializerStudy,
    };
    let c = cli.common;
    let mut cfg = match &c.config {
        Some(path) => ExperimentConfig::load(path, c.preset, scenario)?,
        None => ExperimentConfig::preset(c.preset, scenario),
    };
    if let Some(seed) = c.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = c.out {
        cfg.out = out;
    }
    println!("{scenario}: config {}", cfg.hash()?);
    match scenario {
        Scenario::Simulate => {
            let m = harness::simulate(&cfg)?;
            println!("wrote {} cases to {}", m.cases.len(), cfg.data_dir().display());
        }
        Scenario::Train => {
            let outcome = harness::train(&cfg, |r| {
                println!(
                    "epoch {:>3}  loss {:.4e}  val nrmse {:.4}  ({:.1} s)",
                    r.epoch, r.train_loss, r.val_nrmse, r.seconds
                )
            })?;
            println!(
                "checkpoint with {} parameters in {}",
                outcome.model.params.numel(),
                cfg.checkpoint_dir().display()
            );
        }
        Scenario::Reconstruct => print_rows(&harness::reconstruct(&cfg)?),
        Scenario::Evaluate => print_rows(&harness::evaluate(&cfg)?),
        Scenario::InitializerStudy => print_rows(&harness::initializer_study(&cfg)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
