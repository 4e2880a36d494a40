//! Unitary FFT and patch-operator adjoint checks on random inputs.

use ptychodv::fft::{fft2, ifft2};
use ptychodv::physics::{embed_patch, extract_patch, make_scan_grid};
use ptychodv::{Complex64, ComplexGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(h: usize, w: usize, rng: &mut ChaCha8Rng) -> ComplexGrid {
    ComplexGrid::from_fn(h, w, |_, _| Complex64::new(rng.random(), rng.random()))
}

fn main() -> ptychodv::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (h, w) in [(8, 8), (16, 32), (64, 4)] {
        let x = random(h, w, &mut rng);
        let y = random(h, w, &mut rng);
        let lhs = fft2(&x)?.inner(&y)?;
        let rhs = x.inner(&ifft2(&y)?)?;
        let energy = (fft2(&x)?.norm() - x.norm()).abs();
        println!("{h}x{w}: <Fx,y> - <x,F^-1 y> = {:.1e}, |  ||Fx|| - ||x|| | = {energy:.1e}", (lhs - rhs).norm());
    }

    let grid = make_scan_grid(32, 8, 16, 6)?;
    let x = random(32, 32, &mut rng);
    for i in [0, 5, 15] {
        let p = random(8, 8, &mut rng);
        let lhs = extract_patch(&x, &grid, i)?.inner(&p)?;
        let rhs = x.inner(&embed_patch(&p, &grid, i, grid.dims())?)?;
        println!("patch {i} at {:?}: <D x,p> - <x,D^T p> = {:.1e}", grid.location(i)?, (lhs - rhs).norm());
    }
    Ok(())
}
