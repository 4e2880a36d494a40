//! Wirtinger Flow against its Nesterov-accelerated variant on a noise-free
//! dense scan. Prints NRMSE every 50 iterations.

use ptychodv::physics::{forward_amplitudes, illumination_mask, make_probe, make_scan_grid, DiffractionSet, ProbeKind};
use ptychodv::solvers::{init_image, reconstruct, Algorithm, Reference, SolverConfig};
use ptychodv::train::gen_sample;

fn main() -> ptychodv::Result<()> {
    let probe = make_probe(ProbeKind::A, 8, 0)?;
    let grid = make_scan_grid(32, 8, 49, 4)?;
    let truth = gen_sample(32, 0, 0)?.image;
    let data = DiffractionSet::noise_free(forward_amplitudes(&truth, &probe, &grid)?, &grid)?;
    let reference = Reference {
        image: truth,
        mask: Some(illumination_mask(&probe, &grid)?),
    };
    let init = init_image(&data, &probe, &grid)?;
    let mut traces = Vec::new();
    for algorithm in [Algorithm::Wf, Algorithm::Awf] {
        let (_, trace) = reconstruct(&init, &data, &probe, &grid, &SolverConfig::new(algorithm, 500), Some(&reference))?;
        println!("{algorithm:?}: below 1e-3 after {:?} iterations", trace.first_below(1e-3));
        traces.push(trace.nrmse());
    }
    println!("{:>5} {:>10} {:>10}", "iter", "WF", "AWF");
    for k in (0..traces[0].len()).step_by(50) {
        println!("{k:>5} {:>10.3e} {:>10.3e}", traces[0][k], traces[1][k]);
    }
    Ok(())
}
