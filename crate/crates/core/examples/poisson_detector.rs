//! Shot noise at several peak photon rates.

use ptychodv::metrics::nrmse;
use ptychodv::physics::{detect_poisson, forward_amplitudes, make_probe, make_scan_grid, MaxScope, ProbeKind};
use ptychodv::train::gen_sample;
use ptychodv::ComplexGrid;

fn main() -> ptychodv::Result<()> {
    let probe = make_probe(ProbeKind::A, 16, 0)?;
    let grid = make_scan_grid(64, 16, 16, 12)?;
    let x = gen_sample(64, 0, 0)?.image;
    let clean = forward_amplitudes(&x, &probe, &grid)?;
    let as_grid = |ys: &[ptychodv::RealTensor]| -> ptychodv::Result<ComplexGrid> {
        let v: Vec<f64> = ys.iter().flat_map(|y| y.data().iter().copied()).collect();
        ComplexGrid::new(1, v.len(), v.into_iter().map(|a| (a * a).into()).collect())
    };
    let clean_i = as_grid(&clean)?;
    println!("{:>10}  {:>12}", "peak rate", "intensity err");
    for rate in [1e1, 1e3, 1e5, 1e7] {
        let noisy = detect_poisson(clean.clone(), &grid, rate, 7, MaxScope::Global)?;
        println!("{rate:>10.0e}  {:>12.4}", nrmse(&as_grid(noisy.amplitudes())?, &clean_i)?);
    }
    Ok(())
}
