use crate::complex::ComplexGrid;
use crate::error::{dim_err, Error, Result};
use crate::fft::fft2;
use crate::tensor::RealTensor;

use super::noise::DiffractionSet;
use super::probe::Probe;
use super::scan::ScanGrid;

fn check_canvas(x: &ComplexGrid, grid: &ScanGrid) -> Result<()> {
    if x.dims() != grid.dims() {
        return Err(dim_err!(
            "image {:?} does not match scan grid canvas {:?}",
            x.dims(),
            grid.dims()
        ));
    }
    Ok(())
}

fn check_probe(probe: &Probe, grid: &ScanGrid) -> Result<()> {
    if probe.side() != grid.side() {
        return Err(dim_err!(
            "probe side {} does not match patch side {}",
            probe.side(),
            grid.side()
        ));
    }
    Ok(())
}

/// `D_i x`: the `s x s` patch of `x` at scan position `i`.
pub fn extract_patch(x: &ComplexGrid, grid: &ScanGrid, i: usize) -> Result<ComplexGrid> {
    let loc = grid.location(i)?;
    check_canvas(x, grid)?;
    let s = grid.side();
    Ok(ComplexGrid::from_fn(s, s, |r, c| x.get(loc.row + r, loc.col + c)))
}

/// `D_i^T p`: zero-filled canvas of `dims` holding `p` at position `i`.
pub fn embed_patch(p: &ComplexGrid, grid: &ScanGrid, i: usize, dims: (usize, usize)) -> Result<ComplexGrid> {
    let loc = grid.location(i)?;
    let s = grid.side();
    if p.dims() != (s, s) {
        return Err(dim_err!("patch {:?} but grid side is {}", p.dims(), s));
    }
    if loc.row + s > dims.0 || loc.col + s > dims.1 {
        return Err(dim_err!("patch {} does not fit in canvas {:?}", i, dims));
    }
    let mut out = ComplexGrid::zeros(dims.0, dims.1);
    for r in 0..s {
        for c in 0..s {
            out.set(loc.row + r, loc.col + c, p.get(r, c));
        }
    }
    Ok(out)
}

/// Noise-free amplitudes `|F (P . D_i x)|` for every scan position.
pub fn forward_amplitudes(x: &ComplexGrid, probe: &Probe, grid: &ScanGrid) -> Result<Vec<RealTensor>> {
    check_canvas(x, grid)?;
    check_probe(probe, grid)?;
    (0..grid.len())
        .map(|i| {
            let exit = probe.grid().mul(&extract_patch(x, grid, i)?)?;
            Ok(fft2(&exit)?.magnitude())
        })
        .collect()
}

/// `sum_i D_i^T |P|^kappa` over the scan canvas.
pub fn lambda_map(probe: &Probe, grid: &ScanGrid, kappa: f64) -> Result<RealTensor> {
    if !(kappa >= 0.0) {
        return Err(Error::Contract(format!("kappa must be >= 0, got {kappa}")));
    }
    check_probe(probe, grid)?;
    let weight = probe.magnitude_pow(kappa);
    Ok(accumulate(grid, weight.data()))
}

/// Number of patches covering each pixel.
pub fn coverage_count(grid: &ScanGrid) -> RealTensor {
    accumulate(grid, &vec![1.0; grid.side() * grid.side()])
}

/// Pixels that receive nonzero illumination from at least one position.
pub fn illumination_mask(probe: &Probe, grid: &ScanGrid) -> Result<Vec<bool>> {
    Ok(lambda_map(probe, grid, 2.0)?.data().iter().map(|&v| v > 0.0).collect())
}

fn accumulate(grid: &ScanGrid, weight: &[f64]) -> RealTensor {
    let (h, w) = grid.dims();
    let s = grid.side();
    let mut out = RealTensor::zeros(&[h, w]);
    let d = out.data_mut();
    for loc in grid.locations() {
        for r in 0..s {
            for c in 0..s {
                d[(loc.row + r) * w + loc.col + c] += weight[r * s + c];
            }
        }
    }
    out
}

/// `sum_i (1 / 2 sigma^2) || y_i - |F P D_i x| ||^2`.
pub fn data_fidelity(
    x: &ComplexGrid,
    data: &DiffractionSet,
    probe: &Probe,
    grid: &ScanGrid,
    sigma: f64,
) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Contract(format!("sigma must be > 0, got {sigma}")));
    }
    if data.len() != grid.len() {
        return Err(dim_err!("{} patterns for {} scan positions", data.len(), grid.len()));
    }
    let model = forward_amplitudes(x, probe, grid)?;
    let mut total = 0.0;
    for (y, m) in data.amplitudes().iter().zip(&model) {
        total += y.sub(m)?.sum_sq();
    }
    Ok(total / (2.0 * sigma * sigma))
}

#[cfg(test)]
mod tests {
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::physics::{make_probe, make_scan_grid, Location, ProbeKind};

    fn rand_grid(h: usize, w: usize, rng: &mut ChaCha8Rng) -> ComplexGrid {
        ComplexGrid::from_fn(h, w, |_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
    }

    fn ramp(n: usize) -> ComplexGrid {
        ComplexGrid::from_fn(n, n, |r, c| Complex64::new((r * n + c) as f64, 0.0))
    }

    #[test]
    fn extract_top_left_block() {
        let x = ramp(4);
        let g = ScanGrid::from_locations(4, 4, 2, vec![Location { row: 0, col: 0 }]).unwrap();
        let p = extract_patch(&x, &g, 0).unwrap();
        let vals: Vec<f64> = p.data().iter().map(|z| z.re).collect();
        assert_eq!(vals, vec![0.0, 1.0, 4.0, 5.0]);
        assert!(matches!(extract_patch(&x, &g, 1), Err(Error::Index { .. })));
    }

    #[test]
    fn embed_places_ones() {
        let g = ScanGrid::from_locations(4, 4, 2, vec![Location { row: 1, col: 1 }]).unwrap();
        let ones = ComplexGrid::from_fn(2, 2, |_, _| Complex64::new(1.0, 0.0));
        let img = embed_patch(&ones, &g, 0, (4, 4)).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let want = if (1..=2).contains(&r) && (1..=2).contains(&c) { 1.0 } else { 0.0 };
                assert_eq!(img.get(r, c), Complex64::new(want, 0.0));
            }
        }
        let zero = embed_patch(&ComplexGrid::zeros(2, 2), &g, 0, (4, 4)).unwrap();
        assert_eq!(zero.norm(), 0.0);
    }

    #[test]
    fn extract_embed_extract_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_grid(16, 16, &mut rng);
        let g = make_scan_grid(16, 8, 9, 4).unwrap();
        for i in 0..g.len() {
            let p = extract_patch(&x, &g, i).unwrap();
            let again = extract_patch(&embed_patch(&p, &g, i, (16, 16)).unwrap(), &g, i).unwrap();
            assert_eq!(p, again);
        }
    }

    #[test]
    fn patch_adjoint_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = make_scan_grid(16, 8, 9, 4).unwrap();
        for i in 0..g.len() {
            let x = rand_grid(16, 16, &mut rng);
            let p = rand_grid(8, 8, &mut rng);
            let lhs = extract_patch(&x, &g, i).unwrap().inner(&p).unwrap();
            let rhs = x.inner(&embed_patch(&p, &g, i, (16, 16)).unwrap()).unwrap();
            assert!((lhs - rhs).norm() <= 1e-12);
        }
    }

    #[test]
    fn summed_embeddings_equal_count_weighted_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_grid(16, 16, &mut rng);
        let g = make_scan_grid(16, 8, 4, 5).unwrap();
        let mut sum = ComplexGrid::zeros(16, 16);
        for i in 0..g.len() {
            sum = sum.add(&embed_patch(&extract_patch(&x, &g, i).unwrap(), &g, i, (16, 16)).unwrap()).unwrap();
        }
        // Direct count map: loop over positions, not via `coverage_count`.
        let mut counts = [[0.0f64; 16]; 16];
        for loc in g.locations() {
            for r in 0..8 {
                for c in 0..8 {
                    counts[loc.row + r][loc.col + c] += 1.0;
                }
            }
        }
        for r in 0..16 {
            for c in 0..16 {
                assert!((sum.get(r, c) - x.get(r, c) * counts[r][c]).norm() < 1e-14);
            }
        }
        assert_eq!(coverage_count(&g).data()[5 * 16 + 5], counts[5][5]);
    }

    #[test]
    fn delta_probe_on_unit_object_gives_flat_amplitudes() {
        let s = 8;
        let mut delta = ComplexGrid::zeros(s, s);
        delta.set(s / 2, s / 2, Complex64::new(1.0, 0.0));
        let probe = Probe::new(delta, ProbeKind::Custom("delta".into())).unwrap();
        let g = make_scan_grid(16, s, 4, 4).unwrap();
        let x = ComplexGrid::from_fn(16, 16, |_, _| Complex64::new(1.0, 0.0));
        for y in forward_amplitudes(&x, &probe, &g).unwrap() {
            for v in y.data() {
                assert!((v - 1.0 / s as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn amplitude_energy_matches_exit_wave() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_grid(32, 32, &mut rng);
        let probe = make_probe(ProbeKind::A, 8, 0).unwrap();
        let g = make_scan_grid(32, 8, 16, 4).unwrap();
        let ys = forward_amplitudes(&x, &probe, &g).unwrap();
        for (i, y) in ys.iter().enumerate() {
            let exit = probe.grid().mul(&extract_patch(&x, &g, i).unwrap()).unwrap();
            assert!((y.sum_sq().sqrt() - exit.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_direct_dft_on_4x4() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_grid(4, 4, &mut rng);
        let probe = Probe::new(rand_grid(4, 4, &mut rng), ProbeKind::Custom("rand".into())).unwrap();
        let g = ScanGrid::from_locations(4, 4, 4, vec![Location { row: 0, col: 0 }]).unwrap();
        let y = &forward_amplitudes(&x, &probe, &g).unwrap()[0];
        let exit = probe.grid().mul(&x).unwrap();
        let tau = std::f64::consts::TAU;
        for u in 0..4 {
            for v in 0..4 {
                let mut acc = Complex64::new(0.0, 0.0);
                for r in 0..4 {
                    for c in 0..4 {
                        acc += exit.get(r, c) * Complex64::from_polar(1.0, -tau * ((u * r + v * c) as f64) / 4.0);
                    }
                }
                assert!((y.data()[u * 4 + v] - acc.norm() / 4.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn global_phase_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_grid(16, 16, &mut rng);
        let probe = make_probe(ProbeKind::B, 8, 0).unwrap();
        let g = make_scan_grid(16, 8, 4, 4).unwrap();
        let a = forward_amplitudes(&x, &probe, &g).unwrap();
        let b = forward_amplitudes(&x.scale_complex(Complex64::from_polar(1.0, 1.3)), &probe, &g).unwrap();
        for (ya, yb) in a.iter().zip(&b) {
            assert!(ya.sub(yb).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn lambda_map_cases() {
        let g = make_scan_grid(16, 8, 9, 4).unwrap();
        let flat = Probe::new(
            ComplexGrid::from_fn(8, 8, |r, c| Complex64::from_polar(1.0, (r + c) as f64)),
            ProbeKind::Custom("flat".into()),
        )
        .unwrap();
        let counts = coverage_count(&g);
        for kappa in [0.5, 1.0, 3.0] {
            assert!(lambda_map(&flat, &g, kappa).unwrap().sub(&counts).unwrap().max_abs() < 1e-12);
        }
        let probe = make_probe(ProbeKind::A, 8, 0).unwrap();
        assert_eq!(lambda_map(&probe, &g, 0.0).unwrap(), counts);
        assert!(lambda_map(&probe, &g, -1.0).is_err());
    }

    #[test]
    fn lambda_map_hand_summed_4x4() {
        // Two 2x2 positions at (0,0) and (1,1); |P| = [[1,2],[3,4]], kappa = 2.
        let p = ComplexGrid::new(
            2,
            2,
            vec![
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 2.0),
                Complex64::new(-3.0, 0.0),
                Complex64::new(0.0, -4.0),
            ],
        )
        .unwrap();
        let probe = Probe::new(p, ProbeKind::Custom("toy".into())).unwrap();
        let g = ScanGrid::from_locations(
            4,
            4,
            2,
            vec![Location { row: 0, col: 0 }, Location { row: 1, col: 1 }],
        )
        .unwrap();
        let want = [
            1.0, 4.0, 0.0, 0.0, //
            9.0, 16.0 + 1.0, 4.0, 0.0, //
            0.0, 9.0, 16.0, 0.0, //
            0.0, 0.0, 0.0, 0.0,
        ];
        assert_eq!(lambda_map(&probe, &g, 2.0).unwrap().data(), &want);
    }

    #[test]
    fn fidelity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_grid(16, 16, &mut rng);
        let probe = make_probe(ProbeKind::A, 8, 0).unwrap();
        let g = make_scan_grid(16, 8, 4, 4).unwrap();
        let data = DiffractionSet::noise_free(forward_amplitudes(&x, &probe, &g).unwrap(), &g).unwrap();
        assert!(data_fidelity(&x, &data, &probe, &g, 1.0).unwrap() < 1e-20);

        let zero = ComplexGrid::zeros(16, 16);
        let energy: f64 = data.amplitudes().iter().map(|y| y.sum_sq()).sum();
        let f0 = data_fidelity(&zero, &data, &probe, &g, 2.0).unwrap();
        assert!((f0 - energy / 8.0).abs() < 1e-12);
        assert!(data_fidelity(&x, &data, &probe, &g, 0.0).is_err());
    }

    #[test]
    fn fidelity_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let probe = Probe::new(rand_grid(4, 4, &mut rng), ProbeKind::Custom("r".into())).unwrap();
        let g = make_scan_grid(8, 4, 4, 4).unwrap();
        let truth = rand_grid(8, 8, &mut rng);
        let data = DiffractionSet::noise_free(forward_amplitudes(&truth, &probe, &g).unwrap(), &g).unwrap();
        let x = rand_grid(8, 8, &mut rng);
        let tau = std::f64::consts::TAU;
        let mut want = 0.0;
        for (i, loc) in g.locations().iter().enumerate() {
            for u in 0..4 {
                for v in 0..4 {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for r in 0..4 {
                        for c in 0..4 {
                            let e = probe.grid().get(r, c) * x.get(loc.row + r, loc.col + c);
                            acc += e * Complex64::from_polar(1.0, -tau * ((u * r + v * c) as f64) / 4.0);
                        }
                    }
                    let y = data.amplitudes()[i].data()[u * 4 + v];
                    want += 0.5 * (y - acc.norm() / 4.0).powi(2);
                }
            }
        }
        let got = data_fidelity(&x, &data, &probe, &g, 1.0).unwrap();
        assert!((got - want).abs() < 1e-10);
    }
}
