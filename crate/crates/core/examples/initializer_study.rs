//! PMACE from the baseline initializer against PMACE warm-started by the
//! network, on probes A and B. Loads a checkpoint written by `train_desk`.
//!
//!     cargo run --release --example initializer_study -- /tmp/desk/checkpoint

use std::path::PathBuf;

use ptychodv::harness::{build_cases, study_cases, ExperimentConfig, Scenario};
use ptychodv::harness::commands::summarize;
use ptychodv::train::{load_checkpoint, Preset};

fn main() -> ptychodv::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "desk_train/checkpoint".into()));
    let model = load_checkpoint(&dir)?;
    let cfg = ExperimentConfig::preset(Preset::Desk, Scenario::InitializerStudy);
    let cases = build_cases(&cfg.data, cfg.seed)?;
    for iterations in [1, 10, 30] {
        let results = study_cases(&cases, &model, &cfg.solver, iterations)?;
        for row in summarize(&results)?.iter().filter(|r| r.pattern == "all") {
            println!("{:<28} {}", row.method, row.formatted());
        }
    }
    Ok(())
}
