//! Writes a small test set to disk and reads one case back.
//!
//!     cargo run --release --example simulate_dataset -- /tmp/ptycho_data

use std::path::PathBuf;

use ptychodv::harness::{simulate, Dataset, ExperimentConfig, Scenario};
use ptychodv::train::Preset;

fn main() -> ptychodv::Result<()> {
    let mut cfg = ExperimentConfig::preset(Preset::Desk, Scenario::Simulate);
    cfg.out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "simulated".into()));
    cfg.data.count = 4;
    let manifest = simulate(&cfg)?;
    println!("config {}", cfg.hash()?);
    println!("{} cases in {}", manifest.cases.len(), cfg.data_dir().display());

    let set = Dataset::open(&cfg.data_dir())?;
    let case = set.case(0)?;
    println!(
        "case 0: probe {}, pattern {}, sample {}, {} diffraction patterns of {}x{}",
        case.probe_kind,
        case.pattern,
        case.sample,
        case.data.len(),
        case.probe.side(),
        case.probe.side()
    );
    Ok(())
}
