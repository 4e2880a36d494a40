//! Unitary 2-D FFT on power-of-two grids.
//!
//! Both directions carry a `1/sqrt(h*w)` factor, so the inverse transform is
//! also the adjoint.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::complex::ComplexGrid;
use crate::error::{dim_err, Result};

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cell| {
        let (planner, cache) = &mut *cell.borrow_mut();
        cache
            .entry((len, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(len)
                } else {
                    planner.plan_fft_forward(len)
                }
            })
            .clone()
    })
}

pub fn check_dims(height: usize, width: usize) -> Result<()> {
    if !height.is_power_of_two() || !width.is_power_of_two() {
        return Err(dim_err!(
            "fft2 needs power-of-two dims, got {}x{}",
            height,
            width
        ));
    }
    Ok(())
}

/// In-place unitary transform of a row-major `height x width` buffer.
pub(crate) fn fft2_in_place(buf: &mut [Complex64], height: usize, width: usize, inverse: bool) {
    debug_assert_eq!(buf.len(), height * width);
    let row_plan = plan(width, inverse);
    row_plan.process(buf);

    let mut scratch = vec![Complex64::new(0.0, 0.0); height * width];
    for r in 0..height {
        for c in 0..width {
            scratch[c * height + r] = buf[r * width + c];
        }
    }
    plan(height, inverse).process(&mut scratch);
    let norm = 1.0 / ((height * width) as f64).sqrt();
    for c in 0..width {
        for r in 0..height {
            buf[r * width + c] = scratch[c * height + r] * norm;
        }
    }
}

/// Unitary forward transform.
pub fn fft2(g: &ComplexGrid) -> Result<ComplexGrid> {
    transform(g, false)
}

/// Unitary inverse transform; equal to the adjoint of [`fft2`].
pub fn ifft2(g: &ComplexGrid) -> Result<ComplexGrid> {
    transform(g, true)
}

fn transform(g: &ComplexGrid, inverse: bool) -> Result<ComplexGrid> {
    check_dims(g.height(), g.width())?;
    let mut out = g.clone();
    fft2_in_place(out.data_mut(), g.height(), g.width(), inverse);
    Ok(out)
}

/// Transforms every `[2, h, w]` complex plane pair in a channel-planar buffer
/// (`re` plane followed by `im` plane, repeated `batch` times).
pub(crate) fn fft2_planar(data: &mut [f64], batch: usize, height: usize, width: usize, inverse: bool) {
    let plane = height * width;
    let mut buf = vec![Complex64::new(0.0, 0.0); plane];
    for b in 0..batch {
        let (re, im) = data[2 * b * plane..2 * (b + 1) * plane].split_at_mut(plane);
        for (j, z) in buf.iter_mut().enumerate() {
            *z = Complex64::new(re[j], im[j]);
        }
        fft2_in_place(&mut buf, height, width, inverse);
        for (j, z) in buf.iter().enumerate() {
            re[j] = z.re;
            im[j] = z.im;
        }
    }
}
