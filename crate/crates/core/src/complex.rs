//! Complex 2-D grids.

use num_complex::Complex64;

use crate::error::{dim_err, Result};
use crate::tensor::RealTensor;

/// Row-major complex field of `height x width` pixels, stored interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGrid {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl ComplexGrid {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![Complex64::new(0.0, 0.0); height * width],
        }
    }

    pub fn new(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(dim_err!(
                "{}x{} grid needs {} values, got {}",
                height,
                width,
                height * width,
                data.len()
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    /// Builds a grid from magnitude and phase planes of identical shape.
    pub fn from_polar(magnitude: &RealTensor, phase: &RealTensor) -> Result<Self> {
        magnitude.same_shape(phase)?;
        let (h, w) = plane_dims(magnitude)?;
        let data = magnitude
            .data()
            .iter()
            .zip(phase.data())
            .map(|(&m, &p)| Complex64::from_polar(m, p))
            .collect();
        Self::new(h, w, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.width + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: Complex64) {
        self.data[r * self.width + c] = v;
    }

    pub fn same_dims(&self, other: &ComplexGrid) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(dim_err!(
                "grid dims {:?} vs {:?}",
                self.dims(),
                other.dims()
            ));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    pub fn zip_map(
        &self,
        other: &ComplexGrid,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> Result<Self> {
        self.same_dims(other)?;
        Ok(Self {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &ComplexGrid) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ComplexGrid) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &ComplexGrid) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    /// `conj(self) * other`, elementwise.
    pub fn conj_mul(&self, other: &ComplexGrid) -> Result<Self> {
        self.zip_map(other, |a, b| a.conj() * b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|z| z * c)
    }

    pub fn scale_complex(&self, c: Complex64) -> Self {
        self.map(|z| z * c)
    }

    /// Elementwise `sqrt(re^2 + im^2 + eps^2)`.
    pub fn abs(&self, eps: f64) -> RealTensor {
        let e2 = eps * eps;
        RealTensor::from_fn(&[self.height, self.width], |j| {
            (self.data[j].norm_sqr() + e2).sqrt()
        })
    }

    /// Elementwise `g / abs(g, eps)`; zero where both are zero.
    pub fn phase_unit(&self, eps: f64) -> Self {
        let e2 = eps * eps;
        self.map(|z| {
            let a = (z.norm_sqr() + e2).sqrt();
            if a == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                z / a
            }
        })
    }

    /// Multiplies every pixel by a real plane of the same dims.
    pub fn mul_real(&self, r: &RealTensor) -> Result<Self> {
        if r.numel() != self.len() {
            return Err(dim_err!(
                "real plane of {} values against {:?} grid",
                r.numel(),
                self.dims()
            ));
        }
        Ok(Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(r.data()).map(|(z, &v)| z * v).collect(),
        })
    }

    pub fn max_abs2_reduce(&self) -> f64 {
        self.data.iter().fold(0.0, |m, z| m.max(z.norm_sqr()))
    }

    pub fn max_abs(&self) -> f64 {
        self.max_abs2_reduce().sqrt()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// `sum_j a_j * conj(b_j)`.
    pub fn inner(&self, other: &ComplexGrid) -> Result<Complex64> {
        self.same_dims(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b.conj())
            .sum())
    }

    pub fn magnitude(&self) -> RealTensor {
        self.abs(0.0)
    }

    pub fn phase(&self) -> RealTensor {
        RealTensor::from_fn(&[self.height, self.width], |j| self.data[j].arg())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Channel-planar `[2, h, w]` tensor: real plane then imaginary plane.
    pub fn to_planar(&self) -> RealTensor {
        let n = self.len();
        let mut out = vec![0.0; 2 * n];
        for (j, z) in self.data.iter().enumerate() {
            out[j] = z.re;
            out[n + j] = z.im;
        }
        RealTensor::new(&[2, self.height, self.width], out).expect("planar shape")
    }

    /// Inverse of [`ComplexGrid::to_planar`].
    pub fn from_planar(t: &RealTensor) -> Result<Self> {
        match t.shape() {
            [2, h, w] => {
                let n = h * w;
                let d = t.data();
                let data = (0..n).map(|j| Complex64::new(d[j], d[n + j])).collect();
                Self::new(*h, *w, data)
            }
            s => Err(dim_err!("expected [2, h, w] planar tensor, got {:?}", s)),
        }
    }

    /// Interleaved `[h, w, 2]` tensor (re, im pairs), the on-disk layout.
    pub fn to_interleaved(&self) -> RealTensor {
        let data = self.data.iter().flat_map(|z| [z.re, z.im]).collect();
        RealTensor::new(&[self.height, self.width, 2], data).expect("interleaved shape")
    }

    pub fn from_interleaved(t: &RealTensor) -> Result<Self> {
        match t.shape() {
            [h, w, 2] => {
                let data = t
                    .data()
                    .chunks_exact(2)
                    .map(|p| Complex64::new(p[0], p[1]))
                    .collect();
                Self::new(*h, *w, data)
            }
            s => Err(dim_err!("expected [h, w, 2] interleaved tensor, got {:?}", s)),
        }
    }
}

fn plane_dims(t: &RealTensor) -> Result<(usize, usize)> {
    match t.shape() {
        [h, w] => Ok((*h, *w)),
        s => Err(dim_err!("expected an [h, w] plane, got {:?}", s)),
    }
}
