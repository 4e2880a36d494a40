use crate::autodiff::{Tape, Var};
use crate::error::{dim_err, Result};
use crate::physics::{DiffractionSet, Probe, ScanGrid};
use crate::tensor::RealTensor;

use super::{BoundParams, ModelConfig};

/// Differentiable `sum_i D_i^T P^H F^H (m_i - y_i m_i / |m_i|_eps)` on a
/// `[2, h, w]` image.
pub fn wf_gradient_tape(
    tape: &mut Tape,
    x: Var,
    data: &DiffractionSet,
    probe: &Probe,
    grid: &ScanGrid,
    eps: f64,
) -> Result<Var> {
    let (h, w) = grid.dims();
    let s = grid.side();
    if tape.value(x).shape() != [2, h, w] || data.len() != grid.len() || probe.side() != s {
        return Err(dim_err!("differentiable WF inputs disagree with the scan grid"));
    }
    let mut y = Vec::with_capacity(grid.len() * s * s);
    for a in data.amplitudes() {
        y.extend_from_slice(a.data());
    }
    let y = tape.constant(RealTensor::new(&[grid.len(), s, s], y)?);
    let patches = tape.gather_patch(x, grid.locations(), s)?;
    let lit = tape.complex_mul_const(patches, probe.grid(), false)?;
    let m = tape.fft2_linear(lit)?;
    let phase = tape.complex_phase_unit_eps(m, eps)?;
    let target = tape.complex_scale_real(phase, y)?;
    let r = tape.sub(m, target)?;
    let back = tape.ifft2_linear(r)?;
    let back = tape.complex_mul_const(back, probe.grid(), true)?;
    tape.scatter_patch(back, grid.locations(), h, w)
}

/// `x - gamma * wf_gradient(x)`.
pub fn wf_step_tape(
    tape: &mut Tape,
    x: Var,
    gamma: f64,
    data: &DiffractionSet,
    probe: &Probe,
    grid: &ScanGrid,
    eps: f64,
) -> Result<Var> {
    let g = wf_gradient_tape(tape, x, data, probe, grid, eps)?;
    let g = tape.scale(g, gamma)?;
    tape.sub(x, g)
}

/// Residual refiner: `x + conv(gelu(conv(gelu(conv(x)))))`, 3x3 kernels.
pub fn cnn_forward(tape: &mut Tape, x: Var, p: &BoundParams, prefix: &str) -> Result<Var> {
    let mut h = x;
    for j in 0..3 {
        let w = p.get(&format!("{prefix}.conv{j}.w"))?;
        let b = p.get(&format!("{prefix}.conv{j}.b"))?;
        h = tape.conv2d(h, w, b)?;
        if j < 2 {
            h = tape.gelu(h)?;
        }
    }
    tape.add(x, h)
}

/// `K` repetitions of a WF data step followed by the refiner.
#[allow(clippy::too_many_arguments)]
pub fn du_forward(
    tape: &mut Tape,
    cfg: &ModelConfig,
    p: &BoundParams,
    gamma: f64,
    x0: Var,
    data: &DiffractionSet,
    probe: &Probe,
    grid: &ScanGrid,
) -> Result<Var> {
    let mut x = x0;
    for k in 0..cfg.unroll {
        let z = wf_step_tape(tape, x, gamma, data, probe, grid, cfg.eps)?;
        let j = if cfg.shared_refiner { 0 } else { k };
        x = cnn_forward(tape, z, p, &format!("du.refiner{j}"))?;
    }
    Ok(x)
}
