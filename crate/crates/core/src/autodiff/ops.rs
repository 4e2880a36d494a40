//! Differentiable primitives.

use crate::complex::ComplexGrid;
use crate::error::{dim_err, Result};
use crate::fft;
use crate::physics::Location;
use crate::tensor::{as_matrix, matmul_into, RealTensor};

use super::{Tape, Var};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// `(batch, h, w)` of a channel-planar complex tensor `[.., 2, h, w]`.
fn complex_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    let r = shape.len();
    if r < 3 || shape[r - 3] != 2 {
        return Err(dim_err!("expected a [.., 2, h, w] complex tensor, got {:?}", shape));
    }
    Ok((shape[..r - 3].iter().product(), shape[r - 2], shape[r - 1]))
}

/// `(outer, axis_len, inner)` split around `axis`.
fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(dim_err!("axis {} out of range for shape {:?}", axis, shape));
    }
    Ok((
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    ))
}

fn last_dim(shape: &[usize]) -> Result<usize> {
    shape
        .last()
        .copied()
        .ok_or_else(|| dim_err!("rank-0 tensor has no rows"))
}

fn t(shape: &[usize], data: Vec<f64>) -> RealTensor {
    RealTensor::new(shape, data).expect("primitive produced a consistent shape")
}

/// Multiplies every `[2, h, w]` slice by `c` (or `conj(c)`).
fn complex_mul_planar(src: &[f64], c: &ComplexGrid, conj: bool, batch: usize) -> Vec<f64> {
    let plane = c.len();
    let mut out = vec![0.0; src.len()];
    for b in 0..batch {
        let base = 2 * b * plane;
        for (j, z) in c.data().iter().enumerate() {
            let (cr, ci) = (z.re, if conj { -z.im } else { z.im });
            let (xr, xi) = (src[base + j], src[base + plane + j]);
            out[base + j] = cr * xr - ci * xi;
            out[base + plane + j] = cr * xi + ci * xr;
        }
    }
    out
}

fn gather(
    src: &[f64],
    height: usize,
    width: usize,
    locs: &[Location],
    side: usize,
) -> Vec<f64> {
    let plane = height * width;
    let pp = side * side;
    let mut out = vec![0.0; locs.len() * 2 * pp];
    for (i, loc) in locs.iter().enumerate() {
        for ch in 0..2 {
            for r in 0..side {
                let s0 = ch * plane + (loc.row + r) * width + loc.col;
                let d0 = (i * 2 + ch) * pp + r * side;
                out[d0..d0 + side].copy_from_slice(&src[s0..s0 + side]);
            }
        }
    }
    out
}

fn scatter(
    src: &[f64],
    height: usize,
    width: usize,
    locs: &[Location],
    side: usize,
) -> Vec<f64> {
    let plane = height * width;
    let pp = side * side;
    let mut out = vec![0.0; 2 * plane];
    for (i, loc) in locs.iter().enumerate() {
        for ch in 0..2 {
            for r in 0..side {
                let d0 = ch * plane + (loc.row + r) * width + loc.col;
                let s0 = (i * 2 + ch) * pp + r * side;
                for (d, s) in out[d0..d0 + side].iter_mut().zip(&src[s0..s0 + side]) {
                    *d += s;
                }
            }
        }
    }
    out
}

fn check_locations(locs: &[Location], side: usize, height: usize, width: usize) -> Result<()> {
    for loc in locs {
        if loc.row + side > height || loc.col + side > width {
            return Err(dim_err!(
                "patch of side {} at ({}, {}) exceeds {}x{} canvas",
                side,
                loc.row,
                loc.col,
                height,
                width
            ));
        }
    }
    Ok(())
}

/// Dot product with four partial sums so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `[cin * k * k, h * w]` matrix of zero-padded shifted copies of `x`.
fn im2col(x: &[f64], cin: usize, k: usize, h: usize, wd: usize) -> Vec<f64> {
    let p = k / 2;
    let plane = h * wd;
    let mut cols = vec![0.0; cin * k * k * plane];
    for i in 0..cin {
        for dr in 0..k {
            for dc in 0..k {
                let row = &mut cols[((i * k + dr) * k + dc) * plane..][..plane];
                let (c_lo, c_hi) = (p.saturating_sub(dc), (wd + p).saturating_sub(dc).min(wd));
                if c_lo >= c_hi {
                    continue;
                }
                for r in p.saturating_sub(dr)..(h + p).saturating_sub(dr).min(h) {
                    let src = i * plane + (r + dr - p) * wd + c_lo + dc - p;
                    row[r * wd + c_lo..r * wd + c_hi].copy_from_slice(&x[src..src + (c_hi - c_lo)]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: accumulates shifted rows back into `[cin, h, w]`.
fn col2im(cols: &[f64], cin: usize, k: usize, h: usize, wd: usize) -> Vec<f64> {
    let p = k / 2;
    let plane = h * wd;
    let mut x = vec![0.0; cin * plane];
    for i in 0..cin {
        for dr in 0..k {
            for dc in 0..k {
                let row = &cols[((i * k + dr) * k + dc) * plane..][..plane];
                let (c_lo, c_hi) = (p.saturating_sub(dc), (wd + p).saturating_sub(dc).min(wd));
                if c_lo >= c_hi {
                    continue;
                }
                for r in p.saturating_sub(dr)..(h + p).saturating_sub(dr).min(h) {
                    let dst = i * plane + (r + dr - p) * wd + c_lo + dc - p;
                    for (xv, &cv) in x[dst..dst + (c_hi - c_lo)].iter_mut().zip(&row[r * wd + c_lo..r * wd + c_hi]) {
                        *xv += cv;
                    }
                }
            }
        }
    }
    x
}

impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.val(a)?.add(self.val(b)?)?;
        self.record(v, &[a, b], Box::new(|g, _, _| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.val(a)?.sub(self.val(b)?)?;
        self.record(v, &[a, b], Box::new(|g, _, _| vec![Some(g.clone()), Some(g.scale(-1.0))]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.val(a)?.mul(self.val(b)?)?;
        self.record(
            v,
            &[a, b],
            Box::new(|g, p, _| vec![g.mul(p[1]).ok(), g.mul(p[0]).ok()]),
        )
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.val(a)?.scale(c);
        self.record(v, &[a], Box::new(move |g, _, _| vec![Some(g.scale(c))]))
    }

    /// Adds a `[n]` bias to every row of a `[.., n]` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = last_dim(self.val(x)?.shape())?;
        if self.val(bias)?.shape() != [n] {
            return Err(dim_err!(
                "bias {:?} does not match rows of width {}",
                self.val(bias)?.shape(),
                n
            ));
        }
        let b = self.val(bias)?.data().to_vec();
        let mut v = self.val(x)?.clone();
        for row in v.data_mut().chunks_exact_mut(n) {
            for (o, bv) in row.iter_mut().zip(&b) {
                *o += bv;
            }
        }
        self.record(
            v,
            &[x, bias],
            Box::new(move |g, _, _| {
                let mut gb = vec![0.0; n];
                for row in g.data().chunks_exact(n) {
                    for (acc, gv) in gb.iter_mut().zip(row) {
                        *acc += gv;
                    }
                }
                vec![Some(g.clone()), Some(t(&[n], gb))]
            }),
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.val(a)?.matmul(self.val(b)?)?;
        self.record(
            v,
            &[a, b],
            Box::new(|g, p, _| {
                let (m, k) = as_matrix(p[0]).expect("matrix");
                let n = g.shape()[1];
                // ga = g b^T, gb = a^T g
                let bt = p[1].transpose().expect("matrix");
                let mut ga = vec![0.0; m * k];
                matmul_into(g.data(), bt.data(), &mut ga, m, n, k);
                let at = p[0].transpose().expect("matrix");
                let mut gb = vec![0.0; k * n];
                matmul_into(at.data(), g.data(), &mut gb, k, m, n);
                vec![Some(t(&[m, k], ga)), Some(t(&[k, n], gb))]
            }),
        )
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.val(a)?.transpose()?;
        self.record(v, &[a], Box::new(|g, _, _| vec![g.transpose().ok()]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.val(a)?.clone().reshape(shape)?;
        self.record(
            v,
            &[a],
            Box::new(|g, p, _| vec![g.clone().reshape(p[0].shape()).ok()]),
        )
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .value(*parts.first().ok_or_else(|| dim_err!("concat of nothing"))?)
            .shape()
            .to_vec();
        let mut lens = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.val(p)?.shape();
            let same_elsewhere = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !same_elsewhere || axis >= s.len() {
                return Err(dim_err!("cannot concat {:?} with {:?} on axis {}", s, first, axis));
            }
            lens.push(s[axis]);
        }
        let (outer, _, inner) = axis_split(&first, axis)?;
        let total: usize = lens.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &len) in parts.iter().zip(&lens) {
                let d = self.val(p)?.data();
                data.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let v = t(&shape, data);
        self.record(
            v,
            parts,
            Box::new(move |g, p, _| {
                let mut out: Vec<Vec<f64>> = lens.iter().map(|&l| Vec::with_capacity(outer * l * inner)).collect();
                let gd = g.data();
                let mut off = 0;
                for o in 0..outer {
                    let _ = o;
                    for (buf, &len) in out.iter_mut().zip(&lens) {
                        buf.extend_from_slice(&gd[off..off + len * inner]);
                        off += len * inner;
                    }
                }
                out.into_iter()
                    .zip(p)
                    .map(|(buf, pv)| Some(t(pv.shape(), buf)))
                    .collect()
            }),
        )
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.val(a)?.shape().to_vec();
        let (outer, alen, inner) = axis_split(&shape, axis)?;
        if start + len > alen {
            return Err(dim_err!(
                "slice {}..{} exceeds axis {} of {:?}",
                start,
                start + len,
                axis,
                shape
            ));
        }
        let d = self.val(a)?.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * alen + start) * inner;
            data.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let v = t(&out_shape, data);
        self.record(
            v,
            &[a],
            Box::new(move |g, _, _| {
                let mut gx = vec![0.0; outer * alen * inner];
                for o in 0..outer {
                    let base = (o * alen + start) * inner;
                    gx[base..base + len * inner]
                        .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(t(&shape, gx))]
            }),
        )
    }

    /// Row-wise layer normalization with affine `gain` and `bias` of width `n`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let n = last_dim(self.val(x)?.shape())?;
        if self.val(gain)?.shape() != [n] || self.val(bias)?.shape() != [n] {
            return Err(dim_err!("layer_norm affine params must be [{}]", n));
        }
        let normalize = move |row: &[f64]| -> (Vec<f64>, f64) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            (row.iter().map(|v| (v - mean) * inv).collect(), inv)
        };
        let (gv, bv) = (self.val(gain)?.data().to_vec(), self.val(bias)?.data().to_vec());
        let mut out = Vec::with_capacity(self.val(x)?.numel());
        for row in self.val(x)?.data().chunks_exact(n) {
            let (xh, _) = normalize(row);
            out.extend(xh.iter().zip(&gv).zip(&bv).map(|((h, g), b)| h * g + b));
        }
        let v = t(self.val(x)?.shape(), out);
        self.record(
            v,
            &[x, gain, bias],
            Box::new(move |g, p, _| {
                let gain = p[1].data();
                let mut gx = Vec::with_capacity(p[0].numel());
                let mut gg = vec![0.0; n];
                let mut gb = vec![0.0; n];
                for (row, grow) in p[0].data().chunks_exact(n).zip(g.data().chunks_exact(n)) {
                    let (xh, inv) = normalize(row);
                    let gxh: Vec<f64> = grow.iter().zip(gain).map(|(a, b)| a * b).collect();
                    let m1 = gxh.iter().sum::<f64>() / n as f64;
                    let m2 = gxh.iter().zip(&xh).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for j in 0..n {
                        gx.push(inv * (gxh[j] - m1 - xh[j] * m2));
                        gg[j] += grow[j] * xh[j];
                        gb[j] += grow[j];
                    }
                }
                vec![
                    Some(t(p[0].shape(), gx)),
                    Some(t(&[n], gg)),
                    Some(t(&[n], gb)),
                ]
            }),
        )
    }

    /// Softmax over the last axis.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let n = last_dim(self.val(x)?.shape())?;
        let mut out = Vec::with_capacity(self.val(x)?.numel());
        for row in self.val(x)?.data().chunks_exact(n) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            out.extend(e.iter().map(|v| v / s));
        }
        let v = t(self.val(x)?.shape(), out);
        self.record(
            v,
            &[x],
            Box::new(move |g, _, y| {
                let mut gx = Vec::with_capacity(y.numel());
                for (yr, gr) in y.data().chunks_exact(n).zip(g.data().chunks_exact(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    gx.extend(yr.iter().zip(gr).map(|(yv, gv)| yv * (gv - dot)));
                }
                vec![Some(t(y.shape(), gx))]
            }),
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.val(x)?.map(|a| a.max(0.0));
        self.record(
            v,
            &[x],
            Box::new(|g, p, _| vec![g.zip_map(p[0], |gv, xv| if xv > 0.0 { gv } else { 0.0 }).ok()]),
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let v = self.val(x)?.map(gelu);
        self.record(
            v,
            &[x],
            Box::new(|g, p, _| vec![g.zip_map(p[0], |gv, xv| gv * gelu_grad(xv)).ok()]),
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = RealTensor::scalar(self.val(x)?.sum());
        self.record(
            v,
            &[x],
            Box::new(|g, p, _| vec![Some(RealTensor::full(p[0].shape(), g.data()[0]))]),
        )
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.val(x)?.numel() as f64;
        let v = RealTensor::scalar(self.val(x)?.sum() / n);
        self.record(
            v,
            &[x],
            Box::new(move |g, p, _| vec![Some(RealTensor::full(p[0].shape(), g.data()[0] / n))]),
        )
    }

    pub fn sum_sq(&mut self, x: Var) -> Result<Var> {
        let v = RealTensor::scalar(self.val(x)?.sum_sq());
        self.record(
            v,
            &[x],
            Box::new(|g, p, _| vec![Some(p[0].scale(2.0 * g.data()[0]))]),
        )
    }

    /// Stride-1, zero-padded "same" convolution of `x: [cin, h, w]` with
    /// `weight: [cout, cin, k, k]` (odd `k`) plus `bias: [cout]`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (cin, h, wd) = match self.val(x)?.shape() {
            [c, h, w] => (*c, *h, *w),
            s => return Err(dim_err!("conv2d input must be [c, h, w], got {:?}", s)),
        };
        let (cout, k) = match self.val(weight)?.shape() {
            [o, i, k1, k2] if *i == cin && k1 == k2 && k1 % 2 == 1 => (*o, *k1),
            s => return Err(dim_err!("conv2d weight {:?} incompatible with {} input channels", s, cin)),
        };
        if self.val(bias)?.shape() != [cout] {
            return Err(dim_err!("conv2d bias must be [{}]", cout));
        }
        let plane = h * wd;
        let mut out = vec![0.0; cout * plane];
        for (o, &b) in self.val(bias)?.data().iter().enumerate() {
            out[o * plane..(o + 1) * plane].fill(b);
        }
        let cols = im2col(self.val(x)?.data(), cin, k, h, wd);
        let ck = cin * k * k;
        matmul_into(self.val(weight)?.data(), &cols, &mut out, cout, ck, plane);
        let v = t(&[cout, h, wd], out);
        self.record(
            v,
            &[x, weight, bias],
            Box::new(move |g, p, _| {
                // gw = g cols^T, gx = col2im(w^T g)
                let gd = g.data();
                let mut gw = vec![0.0; cout * ck];
                for o in 0..cout {
                    let grow = &gd[o * plane..(o + 1) * plane];
                    for q in 0..ck {
                        gw[o * ck + q] = dot(grow, &cols[q * plane..(q + 1) * plane]);
                    }
                }
                let wt = p[1].clone().reshape(&[cout, ck]).and_then(|m| m.transpose()).expect("matrix");
                let mut gcols = vec![0.0; ck * plane];
                matmul_into(wt.data(), gd, &mut gcols, ck, cout, plane);
                let gx = col2im(&gcols, cin, k, h, wd);
                let gb = g.data().chunks_exact(plane).map(|c| c.iter().sum()).collect();
                vec![
                    Some(t(&[cin, h, wd], gx)),
                    Some(t(&[cout, cin, k, k], gw)),
                    Some(t(&[cout], gb)),
                ]
            }),
        )
    }

    /// `sqrt(re^2 + im^2 + eps^2)` of a `[.., 2, h, w]` tensor, shape `[.., h, w]`.
    pub fn complex_abs_eps(&mut self, z: Var, eps: f64) -> Result<Var> {
        let shape = self.val(z)?.shape().to_vec();
        let (batch, h, w) = complex_dims(&shape)?;
        let plane = h * w;
        let e2 = eps * eps;
        let d = self.val(z)?.data();
        let mut out = Vec::with_capacity(batch * plane);
        for b in 0..batch {
            let (re, im) = d[2 * b * plane..2 * (b + 1) * plane].split_at(plane);
            out.extend(re.iter().zip(im).map(|(r, i)| (r * r + i * i + e2).sqrt()));
        }
        let out_shape: Vec<usize> = shape[..shape.len() - 3].iter().copied().chain([h, w]).collect();
        let v = t(&out_shape, out);
        self.record(
            v,
            &[z],
            Box::new(move |g, p, a| {
                let d = p[0].data();
                let mut gz = vec![0.0; d.len()];
                for b in 0..batch {
                    for j in 0..plane {
                        let k = b * plane + j;
                        let s = g.data()[k] / a.data()[k];
                        gz[2 * b * plane + j] = s * d[2 * b * plane + j];
                        gz[(2 * b + 1) * plane + j] = s * d[(2 * b + 1) * plane + j];
                    }
                }
                vec![Some(t(p[0].shape(), gz))]
            }),
        )
    }

    /// `z / sqrt(|z|^2 + eps^2)` on a `[.., 2, h, w]` tensor.
    pub fn complex_phase_unit_eps(&mut self, z: Var, eps: f64) -> Result<Var> {
        let shape = self.val(z)?.shape().to_vec();
        let (batch, h, w) = complex_dims(&shape)?;
        let plane = h * w;
        let e2 = eps * eps;
        let d = self.val(z)?.data();
        let mut out = vec![0.0; d.len()];
        for b in 0..batch {
            for j in 0..plane {
                let (ir, ii) = (2 * b * plane + j, (2 * b + 1) * plane + j);
                let a = (d[ir] * d[ir] + d[ii] * d[ii] + e2).sqrt();
                if a > 0.0 {
                    out[ir] = d[ir] / a;
                    out[ii] = d[ii] / a;
                }
            }
        }
        let v = t(&shape, out);
        self.record(
            v,
            &[z],
            Box::new(move |g, p, _| {
                let d = p[0].data();
                let gd = g.data();
                let mut gz = vec![0.0; d.len()];
                for b in 0..batch {
                    for j in 0..plane {
                        let (ir, ii) = (2 * b * plane + j, (2 * b + 1) * plane + j);
                        let (re, im) = (d[ir], d[ii]);
                        let a2 = re * re + im * im + e2;
                        if a2 == 0.0 {
                            continue;
                        }
                        let a = a2.sqrt();
                        let a3 = a2 * a;
                        let cross = -re * im / a3;
                        gz[ir] = gd[ir] * (1.0 / a - re * re / a3) + gd[ii] * cross;
                        gz[ii] = gd[ir] * cross + gd[ii] * (1.0 / a - im * im / a3);
                    }
                }
                vec![Some(t(p[0].shape(), gz))]
            }),
        )
    }

    /// Unitary 2-D FFT of every complex plane pair in `[.., 2, h, w]`.
    pub fn fft2_linear(&mut self, z: Var) -> Result<Var> {
        self.fft_op(z, false)
    }

    /// Unitary inverse 2-D FFT; the adjoint of [`Tape::fft2_linear`].
    pub fn ifft2_linear(&mut self, z: Var) -> Result<Var> {
        self.fft_op(z, true)
    }

    fn fft_op(&mut self, z: Var, inverse: bool) -> Result<Var> {
        let (batch, h, w) = complex_dims(self.val(z)?.shape())?;
        fft::check_dims(h, w)?;
        let mut v = self.val(z)?.clone();
        fft::fft2_planar(v.data_mut(), batch, h, w, inverse);
        self.record(
            v,
            &[z],
            Box::new(move |g, _, _| {
                let mut gz = g.clone();
                fft::fft2_planar(gz.data_mut(), batch, h, w, !inverse);
                vec![Some(gz)]
            }),
        )
    }

    /// Multiplies each `[2, h, w]` plane pair by the fixed field `c`
    /// (or its conjugate).
    pub fn complex_mul_const(&mut self, z: Var, c: &ComplexGrid, conj: bool) -> Result<Var> {
        let (batch, h, w) = complex_dims(self.val(z)?.shape())?;
        if (h, w) != c.dims() {
            return Err(dim_err!("field {:?} against planes {}x{}", c.dims(), h, w));
        }
        let v = t(
            self.val(z)?.shape(),
            complex_mul_planar(self.val(z)?.data(), c, conj, batch),
        );
        let c = c.clone();
        self.record(
            v,
            &[z],
            Box::new(move |g, _, _| {
                vec![Some(t(g.shape(), complex_mul_planar(g.data(), &c, !conj, batch)))]
            }),
        )
    }

    /// Scales both channels of `z: [.., 2, h, w]` by the real `r: [.., h, w]`.
    pub fn complex_scale_real(&mut self, z: Var, r: Var) -> Result<Var> {
        let (batch, h, w) = complex_dims(self.val(z)?.shape())?;
        let plane = h * w;
        if self.val(r)?.numel() != batch * plane {
            return Err(dim_err!(
                "real scale {:?} against complex {:?}",
                self.val(r)?.shape(),
                self.val(z)?.shape()
            ));
        }
        let (zd, rd) = (self.val(z)?.data(), self.val(r)?.data());
        let mut out = vec![0.0; zd.len()];
        for b in 0..batch {
            for ch in 0..2 {
                for j in 0..plane {
                    out[(2 * b + ch) * plane + j] = zd[(2 * b + ch) * plane + j] * rd[b * plane + j];
                }
            }
        }
        let v = t(self.val(z)?.shape(), out);
        self.record(
            v,
            &[z, r],
            Box::new(move |g, p, _| {
                let (zd, rd, gd) = (p[0].data(), p[1].data(), g.data());
                let mut gz = vec![0.0; zd.len()];
                let mut gr = vec![0.0; rd.len()];
                for b in 0..batch {
                    for ch in 0..2 {
                        for j in 0..plane {
                            let k = (2 * b + ch) * plane + j;
                            gz[k] = gd[k] * rd[b * plane + j];
                            gr[b * plane + j] += gd[k] * zd[k];
                        }
                    }
                }
                vec![Some(t(p[0].shape(), gz)), Some(t(p[1].shape(), gr))]
            }),
        )
    }

    /// Extracts `side x side` patches at `locs` from a `[2, h, w]` image,
    /// giving `[n, 2, side, side]`.
    pub fn gather_patch(&mut self, image: Var, locs: &[Location], side: usize) -> Result<Var> {
        let (h, w) = match self.val(image)?.shape() {
            [2, h, w] => (*h, *w),
            s => return Err(dim_err!("gather_patch needs a [2, h, w] image, got {:?}", s)),
        };
        check_locations(locs, side, h, w)?;
        let v = t(
            &[locs.len(), 2, side, side],
            gather(self.val(image)?.data(), h, w, locs, side),
        );
        let locs = locs.to_vec();
        self.record(
            v,
            &[image],
            Box::new(move |g, _, _| vec![Some(t(&[2, h, w], scatter(g.data(), h, w, &locs, side)))]),
        )
    }

    /// Adjoint of [`Tape::gather_patch`]: zero-fills and sums
    /// `[n, 2, side, side]` patches into a `[2, height, width]` canvas.
    pub fn scatter_patch(&mut self, patches: Var, locs: &[Location], height: usize, width: usize) -> Result<Var> {
        let side = match self.val(patches)?.shape() {
            [n, 2, s1, s2] if *n == locs.len() && s1 == s2 => *s1,
            s => return Err(dim_err!("scatter_patch needs [{}, 2, s, s] patches, got {:?}", locs.len(), s)),
        };
        check_locations(locs, side, height, width)?;
        let v = t(
            &[2, height, width],
            scatter(self.val(patches)?.data(), height, width, locs, side),
        );
        let locs = locs.to_vec();
        self.record(
            v,
            &[patches],
            Box::new(move |g, _, _| {
                vec![Some(t(
                    &[locs.len(), 2, side, side],
                    gather(g.data(), height, width, &locs, side),
                ))]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::{grad_check, grad_check_many, CoordSelection};
    use crate::Complex64;

    type Op = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

    struct Case {
        name: &'static str,
        shapes: Vec<Vec<usize>>,
        op: Op,
    }

    fn case(name: &'static str, shapes: &[&[usize]], op: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static) -> Case {
        Case {
            name,
            shapes: shapes.iter().map(|s| s.to_vec()).collect(),
            op: Box::new(op),
        }
    }

    fn probe_field() -> ComplexGrid {
        ComplexGrid::from_fn(4, 4, |r, c| Complex64::from_polar(0.5 + 0.1 * (r + c) as f64, 0.3 * (r * c) as f64))
    }

    fn locs() -> Vec<Location> {
        vec![Location { row: 0, col: 0 }, Location { row: 2, col: 1 }, Location { row: 4, col: 4 }]
    }

    fn cases() -> Vec<Case> {
        vec![
            case("add", &[&[2, 3], &[2, 3]], |t, v| t.add(v[0], v[1])),
            case("sub", &[&[2, 3], &[2, 3]], |t, v| t.sub(v[0], v[1])),
            case("mul", &[&[2, 3], &[2, 3]], |t, v| t.mul(v[0], v[1])),
            case("scale", &[&[5]], |t, v| t.scale(v[0], -1.7)),
            case("add_bias", &[&[3, 4], &[4]], |t, v| t.add_bias(v[0], v[1])),
            case("matmul", &[&[3, 4], &[4, 2]], |t, v| t.matmul(v[0], v[1])),
            case("transpose", &[&[3, 4]], |t, v| t.transpose(v[0])),
            case("reshape", &[&[3, 4]], |t, v| t.reshape(v[0], &[2, 6])),
            case("concat0", &[&[2, 3], &[1, 3]], |t, v| t.concat(&[v[0], v[1]], 0)),
            case("concat1", &[&[2, 3], &[2, 2]], |t, v| t.concat(&[v[0], v[1]], 1)),
            case("slice", &[&[3, 5]], |t, v| t.slice(v[0], 1, 1, 3)),
            case("layer_norm", &[&[3, 5], &[5], &[5]], |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5)),
            case("softmax_rows", &[&[3, 4]], |t, v| t.softmax_rows(v[0])),
            case("relu", &[&[10]], |t, v| t.relu(v[0])),
            case("gelu", &[&[10]], |t, v| t.gelu(v[0])),
            case("sum", &[&[2, 3]], |t, v| t.sum(v[0])),
            case("mean", &[&[2, 3]], |t, v| t.mean(v[0])),
            case("sum_sq", &[&[2, 3]], |t, v| t.sum_sq(v[0])),
            case("conv2d", &[&[2, 5, 4], &[3, 2, 3, 3], &[3]], |t, v| t.conv2d(v[0], v[1], v[2])),
            case("complex_abs_eps", &[&[2, 2, 4, 4]], |t, v| t.complex_abs_eps(v[0], 0.1)),
            case("complex_phase_unit_eps", &[&[2, 4, 4]], |t, v| t.complex_phase_unit_eps(v[0], 0.1)),
            case("fft2_linear", &[&[3, 2, 4, 8]], |t, v| t.fft2_linear(v[0])),
            case("ifft2_linear", &[&[2, 4, 4]], |t, v| t.ifft2_linear(v[0])),
            case("complex_mul_const", &[&[2, 2, 4, 4]], |t, v| t.complex_mul_const(v[0], &probe_field(), false)),
            case("complex_mul_const_conj", &[&[2, 4, 4]], |t, v| t.complex_mul_const(v[0], &probe_field(), true)),
            case("complex_scale_real", &[&[2, 2, 4, 4], &[2, 4, 4]], |t, v| t.complex_scale_real(v[0], v[1])),
            case("gather_patch", &[&[2, 8, 8]], |t, v| t.gather_patch(v[0], &locs(), 4)),
            case("scatter_patch", &[&[3, 2, 4, 4]], |t, v| t.scatter_patch(v[0], &locs(), 8, 8)),
        ]
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> RealTensor {
        RealTensor::from_fn(shape, |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn output_shape(c: &Case, inputs: &[RealTensor]) -> Vec<usize> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
        let out = (c.op)(&mut tape, &vars).unwrap();
        tape.value(out).shape().to_vec()
    }

    fn eval(c: &Case, inputs: &[RealTensor]) -> RealTensor {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = (c.op)(&mut tape, &vars).unwrap();
        tape.value(out).clone()
    }

    /// `u . F(x)` so that non-scalar primitives can be checked.
    fn probe_sum<'a>(c: &'a Case, u: &RealTensor) -> impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'a {
        let u = u.clone();
        move |t: &mut Tape, v: &[Var]| {
            let out = (c.op)(t, v)?;
            let uv = t.constant(u.clone());
            let prod = t.mul(out, uv)?;
            t.sum(prod)
        }
    }

    #[test]
    fn every_primitive_passes_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for c in cases() {
            let inputs: Vec<RealTensor> = c.shapes.iter().map(|s| random(s, &mut rng)).collect();
            let u = random(&output_shape(&c, &inputs), &mut rng);
            let err = grad_check_many(probe_sum(&c, &u), &inputs, 1e-5, CoordSelection::All).unwrap();
            assert!(err < 1e-6, "{}: relative error {err}", c.name);
        }
    }

    fn adjoint_gap(c: &Case, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<RealTensor> = c.shapes.iter().map(|s| random(s, &mut rng)).collect();
        let dx: Vec<RealTensor> = c.shapes.iter().map(|s| random(s, &mut rng)).collect();
        let u = random(&output_shape(c, &x), &mut rng);

        // J dx by two levels of Richardson extrapolation on central differences.
        let shifted = |h: f64| -> Vec<RealTensor> { x.iter().zip(&dx).map(|(a, d)| a.add(&d.scale(h)).unwrap()).collect() };
        let central = |h: f64| eval(c, &shifted(h)).sub(&eval(c, &shifted(-h))).unwrap().scale(0.5 / h);
        let level1 = |h: f64| central(h / 2.0).scale(4.0 / 3.0).sub(&central(h).scale(1.0 / 3.0)).unwrap();
        let h = 1e-3;
        let jdx = level1(h / 2.0).scale(16.0 / 15.0).sub(&level1(h).scale(1.0 / 15.0)).unwrap();
        let lhs = jdx.dot(&u).unwrap();

        let mut tape = Tape::new();
        let vars: Vec<Var> = x.iter().map(|a| tape.param(a.clone())).collect();
        let out = probe_sum(c, &u)(&mut tape, &vars).unwrap();
        let grads = tape.backward(out).unwrap();
        let rhs: f64 = vars.iter().zip(&dx).map(|(v, d)| grads.get(*v).unwrap().dot(d).unwrap()).sum();
        (lhs - rhs).abs()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn adjoint_consistency(seed in any::<u64>()) {
            for c in cases() {
                if c.name == "relu" {
                    continue;
                }
                let gap = adjoint_gap(&c, seed);
                prop_assert!(gap <= 1e-9, "{}: gap {}", c.name, gap);
            }
        }
    }

    #[test]
    fn relu_adjoint_away_from_kink() {
        // Richardson steps cross the kink for inputs within 1e-3 of zero.
        let c = case("relu", &[&[10]], |t, v| t.relu(v[0]));
        for seed in 0..8 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(&[10], &mut rng);
            if x.data().iter().all(|v| v.abs() > 2e-3) {
                assert!(adjoint_gap(&c, seed) <= 1e-9);
            }
        }
    }

    #[test]
    fn sum_sq_check_is_tight() {
        let x = RealTensor::new(&[4], vec![0.3, -1.2, 2.0, 0.01]).unwrap();
        assert!(grad_check(|t, v| t.sum_sq(v), &x, 1e-5).unwrap() < 1e-9);
    }

    #[test]
    fn small_mlp_check() {
        // 2 -> 4 -> 1 with GELU.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inputs = vec![random(&[1, 2], &mut rng), random(&[2, 4], &mut rng), random(&[4], &mut rng), random(&[4, 1], &mut rng)];
        let err = grad_check_many(
            |t, v| {
                let h = t.matmul(v[0], v[1])?;
                let h = t.add_bias(h, v[2])?;
                let h = t.gelu(h)?;
                let y = t.matmul(h, v[3])?;
                t.sum(y)
            },
            &inputs,
            1e-5,
            CoordSelection::All,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn attention_block_check() {
        // Pre-norm block on 3 tokens of width 8, two heads.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let shapes: [&[usize]; 8] = [&[3, 8], &[8], &[8], &[8, 8], &[8, 8], &[8, 8], &[8, 16], &[16, 8]];
        let inputs: Vec<RealTensor> = shapes.iter().map(|s| random(s, &mut rng)).collect();
        let err = grad_check_many(
            |t, v| {
                let h = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
                let (q, k, val) = (t.matmul(h, v[3])?, t.matmul(h, v[4])?, t.matmul(h, v[5])?);
                let mut heads = Vec::new();
                for j in 0..2 {
                    let qh = t.slice(q, 1, 4 * j, 4)?;
                    let kh = t.slice(k, 1, 4 * j, 4)?;
                    let vh = t.slice(val, 1, 4 * j, 4)?;
                    let kt = t.transpose(kh)?;
                    let s = t.matmul(qh, kt)?;
                    let s = t.scale(s, 0.5)?;
                    let a = t.softmax_rows(s)?;
                    heads.push(t.matmul(a, vh)?);
                }
                let att = t.concat(&heads, 1)?;
                let x = t.add(v[0], att)?;
                let m = t.matmul(x, v[6])?;
                let m = t.gelu(m)?;
                let m = t.matmul(m, v[7])?;
                let y = t.add(x, m)?;
                t.sum_sq(y)
            },
            &inputs,
            1e-5,
            CoordSelection::All,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn abs_near_zero_check() {
        let z = RealTensor::new(&[2, 2, 2], vec![1e-3, -2e-3, 5e-4, 3e-3, 2e-3, 1e-3, -1e-3, 4e-4]).unwrap();
        let err = grad_check(|t, v| {
            let a = t.complex_abs_eps(v, 1e-8)?;
            t.sum(a)
        }, &z, 1e-6)
        .unwrap();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn abs_at_zero_has_finite_gradient() {
        let mut tape = Tape::new();
        let z = tape.param(RealTensor::zeros(&[2, 2, 2]));
        let a = tape.complex_abs_eps(z, 1e-12).unwrap();
        let p = tape.complex_phase_unit_eps(z, 1e-12).unwrap();
        let s1 = tape.sum(a).unwrap();
        let s2 = tape.sum(p).unwrap();
        let l = tape.add(s1, s2).unwrap();
        let g = tape.backward(l).unwrap();
        assert!(g.get(z).unwrap().is_finite());
    }

    #[test]
    fn shape_errors() {
        let mut tape = Tape::new();
        let a = tape.param(RealTensor::zeros(&[2, 3]));
        let b = tape.param(RealTensor::zeros(&[3, 2]));
        assert!(tape.add(a, b).is_err());
        assert!(tape.matmul(a, a).is_err());
        assert!(tape.complex_abs_eps(a, 1e-3).is_err());
        assert!(tape.slice(a, 1, 2, 2).is_err());
        assert!(tape.gather_patch(a, &locs(), 4).is_err());
    }
}
