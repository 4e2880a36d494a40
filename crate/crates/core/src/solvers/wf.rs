use num_complex::Complex64;

use crate::complex::ComplexGrid;
use crate::error::{dim_err, Error, Result};
use crate::fft::fft2_in_place;
use crate::physics::{illumination_mask, lambda_map, DiffractionSet, Probe, ScanGrid};

use super::{Clock, ReconTrace, Reference, SolverConfig};

fn check_inputs(x: &ComplexGrid, data: &DiffractionSet, probe: &Probe, grid: &ScanGrid) -> Result<()> {
    if x.dims() != grid.dims() {
        return Err(dim_err!("image {:?} vs scan canvas {:?}", x.dims(), grid.dims()));
    }
    if probe.side() != grid.side() {
        return Err(dim_err!("probe side {} vs patch side {}", probe.side(), grid.side()));
    }
    if data.len() != grid.len() {
        return Err(dim_err!("{} patterns for {} positions", data.len(), grid.len()));
    }
    let s = grid.side();
    if let Some(y) = data.amplitudes().first() {
        if y.numel() != s * s {
            return Err(dim_err!("patterns of {} values for patch side {}", y.numel(), s));
        }
    }
    Ok(())
}

/// Un-scaled WF direction and the objective `1/2 sum ||y - |m|||^2` at `x`.
pub(crate) fn gradient_and_objective(
    x: &ComplexGrid,
    data: &DiffractionSet,
    probe: &Probe,
    grid: &ScanGrid,
    eps: f64,
) -> Result<(ComplexGrid, f64)> {
    check_inputs(x, data, probe, grid)?;
    let s = grid.side();
    let w = grid.width();
    let p = probe.grid().data();
    let e2 = eps * eps;
    let mut grad = ComplexGrid::zeros(grid.height(), grid.width());
    let mut buf = vec![Complex64::new(0.0, 0.0); s * s];
    let mut objective = 0.0;
    for (loc, y) in grid.locations().iter().zip(data.amplitudes()) {
        for r in 0..s {
            for c in 0..s {
                buf[r * s + c] = p[r * s + c] * x.get(loc.row + r, loc.col + c);
            }
        }
        fft2_in_place(&mut buf, s, s, false);
        for (m, &yv) in buf.iter_mut().zip(y.data()) {
            let a = (m.norm_sqr() + e2).sqrt();
            objective += 0.5 * (yv - m.norm()).powi(2);
            *m -= if a > 0.0 { *m * (yv / a) } else { Complex64::new(0.0, 0.0) };
        }
        fft2_in_place(&mut buf, s, s, true);
        let g = grad.data_mut();
        for r in 0..s {
            for c in 0..s {
                g[(loc.row + r) * w + loc.col + c] += p[r * s + c].conj() * buf[r * s + c];
            }
        }
    }
    Ok((grad, objective))
}

/// `sum_i D_i^T P^H F^H (m_i - y_i m_i / |m_i|_eps)` with `m_i = F P D_i x`.
///
/// This is the gradient of `1/2 sum_i ||y_i - |m_i|||^2` with respect to the
/// real and imaginary parts of `x`. The step size is applied by the caller.
pub fn wf_gradient(x: &ComplexGrid, data: &DiffractionSet, probe: &Probe, grid: &ScanGrid, eps: f64) -> Result<ComplexGrid> {
    if !(eps > 0.0) {
        return Err(Error::Contract(format!("eps must be > 0, got {eps}")));
    }
    Ok(gradient_and_objective(x, data, probe, grid, eps)?.0)
}

/// `1 / max(sum_i D_i^T |P|^2)`.
pub fn wf_step_size(probe: &Probe, grid: &ScanGrid) -> Result<f64> {
    let peak = lambda_map(probe, grid, 2.0)?.max_abs();
    if !(peak > 0.0) {
        return Err(Error::Contract("probe illuminates no pixel".into()));
    }
    Ok(1.0 / peak)
}

fn objective_at(x: &ComplexGrid, data: &DiffractionSet, probe: &Probe, grid: &ScanGrid, eps: f64) -> Result<f64> {
    Ok(gradient_and_objective(x, data, probe, grid, eps)?.1)
}

fn score(reference: Option<&Reference>, x: &ComplexGrid) -> Result<Option<f64>> {
    reference.map(|r| r.nrmse(x)).transpose()
}

/// Plain gradient descent `x <- x - gamma * wf_gradient(x)`.
pub fn run_wf(
    init: &ComplexGrid,
    data: &DiffractionSet,
    probe: &Probe,
    grid: &ScanGrid,
    cfg: &SolverConfig,
    reference: Option<&Reference>,
) -> Result<(ComplexGrid, ReconTrace)> {
    cfg.validate()?;
    check_inputs(init, data, probe, grid)?;
    let gamma = cfg.step_size(probe, grid)?;
    let clock = Clock::start();
    let mut trace = ReconTrace::default();
    let mut x = init.clone();
    for k in 0..cfg.iterations {
        let (grad, obj) = gradient_and_objective(&x, data, probe, grid, cfg.eps)?;
        if cfg.trace {
            trace.push(k, Some(obj), score(reference, &x)?, clock.seconds());
        } else {
            trace.push(k, None, None, clock.seconds());
        }
        for (xv, gv) in x.data_mut().iter_mut().zip(grad.data()) {
            *xv -= gv * gamma;
        }
    }
    let last = if cfg.trace {
        (Some(objective_at(&x, data, probe, grid, cfg.eps)?), score(reference, &x)?)
    } else {
        (None, None)
    };
    trace.push(cfg.iterations, last.0, last.1, clock.seconds());
    Ok((x, trace))
}

/// Momentum weights `(t_k - 1) / t_{k+1}` for `k = 0..n`, with `t_0 = 1`.
pub fn nesterov_coefficients(n: usize) -> Vec<f64> {
    let mut t = 1.0f64;
    (0..n)
        .map(|_| {
            let next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let beta = (t - 1.0) / next;
            t = next;
            beta
        })
        .collect()
}

/// Nesterov-accelerated WF.
pub fn run_awf(
    init: &ComplexGrid,
    data: &DiffractionSet,
    probe: &Probe,
    grid: &ScanGrid,
    cfg: &SolverConfig,
    reference: Option<&Reference>,
) -> Result<(ComplexGrid, ReconTrace)> {
    cfg.validate()?;
    check_inputs(init, data, probe, grid)?;
    let gamma = cfg.step_size(probe, grid)?;
    let betas = nesterov_coefficients(cfg.iterations);
    let clock = Clock::start();
    let mut trace = ReconTrace::default();
    let mut x = init.clone();
    let mut z = init.clone();
    for (k, beta) in betas.into_iter().enumerate() {
        if cfg.trace {
            let obj = objective_at(&x, data, probe, grid, cfg.eps)?;
            trace.push(k, Some(obj), score(reference, &x)?, clock.seconds());
        } else {
            trace.push(k, None, None, clock.seconds());
        }
        let (grad, _) = gradient_and_objective(&z, data, probe, grid, cfg.eps)?;
        let next = z.zip_map(&grad, |zv, gv| zv - gv * gamma)?;
        z = next.zip_map(&x, |n, o| n + (n - o) * beta)?;
        x = next;
    }
    let last = if cfg.trace {
        (Some(objective_at(&x, data, probe, grid, cfg.eps)?), score(reference, &x)?)
    } else {
        (None, None)
    };
    trace.push(cfg.iterations, last.0, last.1, clock.seconds());
    Ok((x, trace))
}

/// Energy-matched constant image: magnitude
/// `sqrt(mean_i ||y_i||^2 / ||P||^2)`, phase 0, on illuminated pixels.
pub fn init_image(data: &DiffractionSet, probe: &Probe, grid: &ScanGrid) -> Result<ComplexGrid> {
    if data.is_empty() {
        return Err(Error::Contract("no measurements".into()));
    }
    let mean_energy = data.amplitudes().iter().map(|y| y.sum_sq()).sum::<f64>() / data.len() as f64;
    let magnitude = (mean_energy / probe.grid().norm_sqr()).sqrt();
    let mask = illumination_mask(probe, grid)?;
    let (h, w) = grid.dims();
    let mut out = ComplexGrid::zeros(h, w);
    for (v, lit) in out.data_mut().iter_mut().zip(mask) {
        if lit {
            *v = Complex64::new(magnitude, 0.0);
        }
    }
    Ok(out)
}
