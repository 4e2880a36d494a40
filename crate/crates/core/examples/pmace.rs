//! PMACE on a noisy scan, written out as 16-bit grayscale maps.
//!
//!     cargo run --release --example pmace -- /tmp/pmace

use std::path::PathBuf;

use ptychodv::harness::pgm::export_image;
use ptychodv::physics::{illumination_mask, make_probe, ProbeKind};
use ptychodv::solvers::{init_image, run_pmace, Algorithm, Reference, SolverConfig};
use ptychodv::train::{gen_sample, simulate, Pattern};

fn main() -> ptychodv::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "pmace_out".into()));
    let probe = make_probe(ProbeKind::B, 16, 0)?;
    let grid = Pattern { n: 49, spacing: 8 }.grid(64, 16)?;
    let truth = gen_sample(64, 0, 3)?.image;
    let data = simulate(&truth, &probe, &grid, Some(1e5), 11)?;
    let reference = Reference {
        image: truth.clone(),
        mask: Some(illumination_mask(&probe, &grid)?),
    };
    let init = init_image(&data, &probe, &grid)?;
    let (x, trace) = run_pmace(&init, &data, &probe, &grid, &SolverConfig::new(Algorithm::Pmace, 100), Some(&reference))?;
    let nrmse = trace.nrmse();
    for k in [0, 10, 30, 100] {
        println!("iteration {k:>3}: nrmse {:.4}", nrmse[k.min(nrmse.len() - 1)]);
    }
    export_image(&truth, &out, "truth")?;
    export_image(&x, &out, "pmace")?;
    println!("maps in {}", out.display());
    Ok(())
}
