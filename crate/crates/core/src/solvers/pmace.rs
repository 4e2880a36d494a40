//! Projected multi-agent consensus equilibrium.
//!
//! Each scan position is an agent whose proximal map fits its own
//! diffraction pattern; the consensus operator averages overlapping patches
//! with `|P|^kappa` weights. The equilibrium is found with a Mann iteration
//! on the stacked patch state.

use num_complex::Complex64;

use crate::complex::ComplexGrid;
use crate::error::{dim_err, Error, Result};
use crate::fft::fft2_in_place;
use crate::physics::{data_fidelity, extract_patch, lambda_map, DiffractionSet, Probe, ScanGrid};
use crate::tensor::RealTensor;

use super::{Clock, ReconTrace, Reference, SolverConfig};

/// Closed-form proximal map of one agent.
///
/// With `m = F(P x_i)` the minimizer keeps the phase of `m` and moves its
/// magnitude to `(alpha |m| + y) / (1 + alpha)`. The Fourier-domain
/// correction is mapped back through `conj(P) / max(|P|^2, delta)`,
/// `delta = 1e-3 max |P|^2`.
pub fn pmace_prox(x_i: &ComplexGrid, y_i: &RealTensor, probe: &Probe, alpha: f64, eps: f64) -> Result<ComplexGrid> {
    if x_i.dims() != probe.grid().dims() || y_i.numel() != x_i.len() {
        return Err(dim_err!(
            "patch {:?}, pattern {:?} and probe {:?} disagree",
            x_i.dims(),
            y_i.shape(),
            probe.grid().dims()
        ));
    }
    if !(alpha > 0.0) {
        return Err(Error::Contract(format!("alpha must be > 0, got {alpha}")));
    }
    if alpha.is_infinite() {
        return Ok(x_i.clone());
    }
    let s = probe.side();
    let p = probe.grid().data();
    let delta = 1e-3 * probe.grid().max_abs2_reduce();
    let e2 = eps * eps;
    let mut buf: Vec<Complex64> = p.iter().zip(x_i.data()).map(|(a, b)| a * b).collect();
    fft2_in_place(&mut buf, s, s, false);
    for (m, &y) in buf.iter_mut().zip(y_i.data()) {
        let a = (m.norm_sqr() + e2).sqrt();
        let target = (alpha * m.norm() + y) / (1.0 + alpha);
        let u = if a > 0.0 { *m * (target / a) } else { Complex64::new(0.0, 0.0) };
        *m = u - *m;
    }
    fft2_in_place(&mut buf, s, s, true);
    let data = x_i
        .data()
        .iter()
        .zip(p)
        .zip(&buf)
        .map(|((&x, pv), &d)| x + pv.conj() / pv.norm_sqr().max(delta) * d)
        .collect();
    ComplexGrid::new(s, s, data)
}

/// `Lambda^{-1} sum_i D_i^T (|P|^kappa x_i)`, zero where `Lambda = 0`.
pub fn pmace_consensus(patches: &[ComplexGrid], probe: &Probe, grid: &ScanGrid, kappa: f64) -> Result<ComplexGrid> {
    if patches.len() != grid.len() {
        return Err(dim_err!("{} patches for {} positions", patches.len(), grid.len()));
    }
    let weights = probe.magnitude_pow(kappa);
    let lambda = lambda_map(probe, grid, kappa)?;
    let (h, w) = grid.dims();
    let s = grid.side();
    let mut acc = ComplexGrid::zeros(h, w);
    {
        let a = acc.data_mut();
        for (loc, patch) in grid.locations().iter().zip(patches) {
            if patch.dims() != (s, s) {
                return Err(dim_err!("patch {:?} for side {}", patch.dims(), s));
            }
            for r in 0..s {
                for c in 0..s {
                    a[(loc.row + r) * w + loc.col + c] += patch.get(r, c) * weights.data()[r * s + c];
                }
            }
        }
    }
    for (v, &l) in acc.data_mut().iter_mut().zip(lambda.data()) {
        *v = if l > 0.0 { *v / l } else { Complex64::new(0.0, 0.0) };
    }
    Ok(acc)
}

fn extract_all(x: &ComplexGrid, grid: &ScanGrid) -> Result<Vec<ComplexGrid>> {
    (0..grid.len()).map(|i| extract_patch(x, grid, i)).collect()
}

/// Stacked patch state of the Mann iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct PmaceState {
    pub patches: Vec<ComplexGrid>,
}

impl PmaceState {
    pub fn from_image(x: &ComplexGrid, grid: &ScanGrid) -> Result<Self> {
        Ok(Self {
            patches: extract_all(x, grid)?,
        })
    }

    /// Agent outputs `F(w)`.
    pub fn agents(&self, data: &DiffractionSet, probe: &Probe, cfg: &SolverConfig) -> Result<Vec<ComplexGrid>> {
        self.patches
            .iter()
            .zip(data.amplitudes())
            .map(|(w, y)| pmace_prox(w, y, probe, cfg.alpha, cfg.eps))
            .collect()
    }

    /// One Mann step `w <- (1 - rho) w + rho (2G - I)(2F - I) w`, given the
    /// agent outputs `F(w)` already evaluated at the current state.
    pub fn step_with(&mut self, agents: &[ComplexGrid], probe: &Probe, grid: &ScanGrid, cfg: &SolverConfig) -> Result<()> {
        let v: Vec<ComplexGrid> = agents
            .iter()
            .zip(&self.patches)
            .map(|(f, w)| f.zip_map(w, |a, b| a * 2.0 - b))
            .collect::<Result<_>>()?;
        let consensus = pmace_consensus(&v, probe, grid, cfg.kappa)?;
        let rho = cfg.rho;
        for (i, (w, vi)) in self.patches.iter_mut().zip(&v).enumerate() {
            let g = extract_patch(&consensus, grid, i)?;
            for ((wv, &vv), gv) in w.data_mut().iter_mut().zip(vi.data()).zip(g.data()) {
                let u = *gv * 2.0 - vv;
                *wv = *wv * (1.0 - rho) + u * rho;
            }
        }
        Ok(())
    }

    pub fn step(&mut self, data: &DiffractionSet, probe: &Probe, grid: &ScanGrid, cfg: &SolverConfig) -> Result<()> {
        let agents = self.agents(data, probe, cfg)?;
        self.step_with(&agents, probe, grid, cfg)
    }
}

/// PMACE from the patches of `init`. The image estimate is the consensus of
/// the agent outputs; with zero iterations it is the consensus of the
/// initial patches.
pub fn run_pmace(
    init: &ComplexGrid,
    data: &DiffractionSet,
    probe: &Probe,
    grid: &ScanGrid,
    cfg: &SolverConfig,
    reference: Option<&Reference>,
) -> Result<(ComplexGrid, ReconTrace)> {
    cfg.validate()?;
    if init.dims() != grid.dims() || data.len() != grid.len() || probe.side() != grid.side() {
        return Err(dim_err!("pmace inputs disagree with the scan grid"));
    }
    let clock = Clock::start();
    let mut trace = ReconTrace::default();
    let mut state = PmaceState::from_image(init, grid)?;
    let record = |trace: &mut ReconTrace, k: usize, x: &ComplexGrid| -> Result<()> {
        if cfg.trace {
            let obj = data_fidelity(x, data, probe, grid, 1.0)?;
            let score = reference.map(|r| r.nrmse(x)).transpose()?;
            trace.push(k, Some(obj), score, clock.seconds());
        } else {
            trace.push(k, None, None, clock.seconds());
        }
        Ok(())
    };

    let mut estimate = pmace_consensus(&state.patches, probe, grid, cfg.kappa)?;
    record(&mut trace, 0, &estimate)?;
    for k in 1..=cfg.iterations {
        let agents = state.agents(data, probe, cfg)?;
        state.step_with(&agents, probe, grid, cfg)?;
        estimate = pmace_consensus(&state.agents(data, probe, cfg)?, probe, grid, cfg.kappa)?;
        record(&mut trace, k, &estimate)?;
    }
    Ok((estimate, trace))
}
