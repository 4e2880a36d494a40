use std::f64::consts::PI;

use num_complex::Complex64;

use crate::autodiff::{Tape, Var};
use crate::complex::ComplexGrid;
use crate::error::{dim_err, Error, Result};
use crate::physics::{coverage_count, DiffractionSet, ScanGrid};
use crate::tensor::RealTensor;

use super::{BoundParams, ViTConfig};

/// Fourier features `[sin(2^l pi c), cos(2^l pi c)]` for `l = 0..=bands`,
/// first coordinate then second; length `4 (bands + 1)`.
pub fn positional_encode(c: [f64; 2], bands: usize) -> Result<RealTensor> {
    if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Contract(format!("coordinates {c:?} outside [0, 1]")));
    }
    let mut out = Vec::with_capacity(4 * (bands + 1));
    for v in c {
        for l in 0..=bands {
            let a = (1u64 << l) as f64 * PI * v;
            out.push(a.sin());
            out.push(a.cos());
        }
    }
    RealTensor::new(&[out.len()], out)
}

pub(crate) fn linear(tape: &mut Tape, x: Var, p: &BoundParams, prefix: &str) -> Result<Var> {
    let y = tape.matmul(x, p.get(&format!("{prefix}.w"))?)?;
    tape.add_bias(y, p.get(&format!("{prefix}.b"))?)
}

fn mlp(tape: &mut Tape, x: Var, p: &BoundParams, prefix: &str) -> Result<Var> {
    let h = linear(tape, x, p, &format!("{prefix}.0"))?;
    let h = tape.gelu(h)?;
    linear(tape, h, p, &format!("{prefix}.1"))
}

fn layer_norm(tape: &mut Tape, x: Var, p: &BoundParams, prefix: &str) -> Result<Var> {
    tape.layer_norm(x, p.get(&format!("{prefix}.g"))?, p.get(&format!("{prefix}.b"))?, 1e-5)
}

fn attention(tape: &mut Tape, x: Var, p: &BoundParams, prefix: &str, heads: usize) -> Result<Var> {
    let width = tape.value(x).shape()[1];
    let dh = width / heads;
    let q = linear(tape, x, p, &format!("{prefix}.q"))?;
    let k = tape.matmul(x, p.get(&format!("{prefix}.k.w"))?)?;
    let v = linear(tape, x, p, &format!("{prefix}.v"))?;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice(q, 1, h * dh, dh)?;
        let kh = tape.slice(k, 1, h * dh, dh)?;
        let vh = tape.slice(v, 1, h * dh, dh)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let att = tape.softmax_rows(scores)?;
        outs.push(tape.matmul(att, vh)?);
    }
    let joined = tape.concat(&outs, 1)?;
    linear(tape, joined, p, &format!("{prefix}.o"))
}

/// Patches `[n, 2, s, s]` predicted from the diffraction patterns and their
/// scan coordinates.
pub fn vit_forward(
    tape: &mut Tape,
    cfg: &ViTConfig,
    p: &BoundParams,
    data: &DiffractionSet,
    grid: &ScanGrid,
) -> Result<Var> {
    let s = cfg.patch;
    let n = data.len();
    if grid.side() != s || grid.len() != n {
        return Err(dim_err!(
            "model patch {} with {} patterns against grid side {} with {} positions",
            s,
            n,
            grid.side(),
            grid.len()
        ));
    }
    let mut meas = Vec::with_capacity(n * s * s);
    for y in data.amplitudes() {
        if y.numel() != s * s {
            return Err(dim_err!("pattern {:?} for patch side {}", y.shape(), s));
        }
        meas.extend_from_slice(y.data());
    }
    let mut coords = Vec::with_capacity(n * 4 * (cfg.bands + 1));
    for c in data.coords() {
        coords.extend_from_slice(positional_encode(*c, cfg.bands)?.data());
    }
    let meas = tape.constant(RealTensor::new(&[n, s * s], meas)?);
    let coords = tape.constant(RealTensor::new(&[n, 4 * (cfg.bands + 1)], coords)?);

    let fm = mlp(tape, meas, p, "vit.meas")?;
    let fc = mlp(tape, coords, p, "vit.coord")?;
    let mut x = tape.concat(&[fm, fc], 1)?;
    for b in 0..cfg.depth {
        let pre = format!("vit.block{b}");
        let h = layer_norm(tape, x, p, &format!("{pre}.ln1"))?;
        let h = attention(tape, h, p, &format!("{pre}.attn"), cfg.heads)?;
        x = tape.add(x, h)?;
        let h = layer_norm(tape, x, p, &format!("{pre}.ln2"))?;
        let h = mlp(tape, h, p, &format!("{pre}.mlp"))?;
        x = tape.add(x, h)?;
    }
    let h = layer_norm(tape, x, p, "vit.head.ln")?;
    let out = mlp(tape, h, p, "vit.head")?;
    tape.reshape(out, &[n, 2, s, s])
}

fn inverse_count(grid: &ScanGrid) -> RealTensor {
    coverage_count(grid).map(|c| if c > 0.0 { 1.0 / c } else { 0.0 })
}

/// Count-averaged overlay of `[n, 2, s, s]` patches onto the grid canvas.
pub fn stitch_tape(tape: &mut Tape, patches: Var, grid: &ScanGrid) -> Result<Var> {
    let (h, w) = grid.dims();
    let summed = tape.scatter_patch(patches, grid.locations(), h, w)?;
    let inv = inverse_count(grid);
    let mut both = inv.data().to_vec();
    both.extend_from_slice(inv.data());
    let inv = tape.constant(RealTensor::new(&[2, h, w], both)?);
    tape.mul(summed, inv)
}

/// [`stitch_tape`] on plain complex patches.
pub fn stitch(patches: &[ComplexGrid], grid: &ScanGrid) -> Result<ComplexGrid> {
    if patches.len() != grid.len() {
        return Err(dim_err!("{} patches for {} positions", patches.len(), grid.len()));
    }
    let (h, w) = grid.dims();
    let s = grid.side();
    let mut acc = ComplexGrid::zeros(h, w);
    for (loc, p) in grid.locations().iter().zip(patches) {
        if p.dims() != (s, s) {
            return Err(dim_err!("patch {:?} for side {}", p.dims(), s));
        }
        for r in 0..s {
            for c in 0..s {
                let z = acc.get(loc.row + r, loc.col + c) + p.get(r, c);
                acc.set(loc.row + r, loc.col + c, z);
            }
        }
    }
    let inv = inverse_count(grid);
    for (z, &k) in acc.data_mut().iter_mut().zip(inv.data()) {
        *z = if k > 0.0 { *z * k } else { Complex64::new(0.0, 0.0) };
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check_many, CoordSelection};
    use crate::net::tests::{tiny_config, tiny_problem};
    use crate::net::PtychoDVModel;
    use crate::physics::{extract_patch, make_scan_grid, Location};

    #[test]
    fn encoding_cases() {
        let z = positional_encode([0.0, 0.0], 3).unwrap();
        for pair in z.data().chunks(2) {
            assert_eq!(pair, [0.0, 1.0]);
        }
        let e = positional_encode([0.5, 0.0], 0).unwrap();
        let want = [1.0, 0.0, 0.0, 1.0];
        for (a, b) in e.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(positional_encode([0.3, 0.7], 10).unwrap().numel(), 44);
        assert!(matches!(positional_encode([1.2, 0.0], 2), Err(Error::Contract(_))));
    }

    #[test]
    fn stitch_inverts_extraction() {
        let x = ComplexGrid::from_fn(16, 16, |r, c| Complex64::new(r as f64, c as f64 * 0.5));
        let grid = make_scan_grid(16, 8, 4, 2).unwrap();
        let patches: Vec<ComplexGrid> = (0..4).map(|i| extract_patch(&x, &grid, i).unwrap()).collect();
        let y = stitch(&patches, &grid).unwrap();
        let count = coverage_count(&grid);
        for j in 0..256 {
            if count.data()[j] > 0.0 {
                assert!((y.data()[j] - x.data()[j]).norm() < 1e-12);
            } else {
                assert_eq!(y.data()[j], Complex64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn stitch_averages_overlap() {
        let grid = ScanGrid::from_locations(4, 4, 2, vec![Location { row: 1, col: 0 }, Location { row: 1, col: 1 }]).unwrap();
        let ones = ComplexGrid::from_fn(2, 2, |_, _| Complex64::new(1.0, 0.0));
        let threes = ones.scale(3.0);
        let y = stitch(&[ones, threes], &grid).unwrap();
        assert_eq!(y.get(1, 1), Complex64::new(2.0, 0.0));
        assert_eq!(y.get(2, 1), Complex64::new(2.0, 0.0));
        assert_eq!(y.get(1, 0), Complex64::new(1.0, 0.0));
        assert_eq!(y.get(1, 2), Complex64::new(3.0, 0.0));
        assert_eq!(y.get(0, 0), Complex64::new(0.0, 0.0));

        // The tape version agrees.
        let mut tape = Tape::new();
        let mut planar = ComplexGrid::from_fn(2, 2, |_, _| Complex64::new(1.0, 0.0)).to_planar().into_data();
        planar.extend(ComplexGrid::from_fn(2, 2, |_, _| Complex64::new(3.0, 0.0)).to_planar().into_data());
        let p = tape.constant(RealTensor::new(&[2, 2, 2, 2], planar).unwrap());
        let v = stitch_tape(&mut tape, p, &grid).unwrap();
        assert_eq!(ComplexGrid::from_planar(tape.value(v)).unwrap(), y);
    }

    #[test]
    fn vit_shape_and_permutation_equivariance() {
        let (_, _, grid, data) = tiny_problem();
        let cfg = tiny_config(0);
        let model = PtychoDVModel::new(cfg.clone(), 7).unwrap();
        let run = |data: &DiffractionSet, grid: &ScanGrid| {
            let mut tape = Tape::new();
            let b = model.params.bind_constant(&mut tape);
            let v = vit_forward(&mut tape, &cfg.vit, &b, data, grid).unwrap();
            tape.value(v).clone()
        };
        let base = run(&data, &grid);
        assert_eq!(base.shape(), [4, 2, 8, 8]);
        let perm = [2, 0, 3, 1];
        let permuted = run(&data.permuted(&perm).unwrap(), &grid.permuted(&perm).unwrap());
        let chunk = 2 * 64;
        for (i, &src) in perm.iter().enumerate() {
            let a = &permuted.data()[i * chunk..(i + 1) * chunk];
            let b = &base.data()[src * chunk..(src + 1) * chunk];
            for (u, v) in a.iter().zip(b) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_block_gradient_check() {
        let (_, _, grid, data) = tiny_problem();
        let cfg = tiny_config(0);
        let model = PtychoDVModel::new(cfg.clone(), 9).unwrap();
        let names: Vec<String> = model.params.names().map(String::from).collect();
        let inputs: Vec<RealTensor> = names.iter().map(|n| model.params.get(n).unwrap().clone()).collect();
        let err = grad_check_many(
            |tape, vars| {
                let b = BoundParams::from_vars(names.iter().cloned().zip(vars.iter().copied()));
                let out = vit_forward(tape, &cfg.vit, &b, &data, &grid)?;
                let sq = tape.sum_sq(out)?;
                Ok(sq)
            },
            &inputs,
            1e-4,
            CoordSelection::Sampled { per_tensor: 4, seed: 1 },
        )
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }
}
