//! Classical iterative reconstruction.
//!
//! All solvers minimize `sum_i 1/2 || y_i - |F P D_i x| ||^2` (unit noise
//! variance) and record a [`ReconTrace`] with one row per iterate, the
//! initialization included.

mod pmace;
mod trace;
mod wf;

use std::time::Instant;

pub use pmace::{pmace_consensus, pmace_prox, run_pmace, PmaceState};
pub use trace::{ReconTrace, Reference, TraceRow};
pub use wf::{init_image, nesterov_coefficients, run_awf, run_wf, wf_gradient, wf_step_size};

use serde::{Deserialize, Serialize};

use crate::complex::ComplexGrid;
use crate::error::{Error, Result};
use crate::physics::{DiffractionSet, Probe, ScanGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Wf,
    Awf,
    Pmace,
}

/// WF step size: `1 / max(sum_i D_i^T |P|^2)` or a fixed value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaMode {
    Auto,
    Explicit(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    pub iterations: usize,
    pub gamma: GammaMode,
    /// PMACE probe exponent.
    pub kappa: f64,
    /// PMACE Mann relaxation in `(0, 1]`.
    pub rho: f64,
    /// PMACE prox weight: noise variance over prior variance.
    pub alpha: f64,
    /// Smoothing in `|m|_eps`.
    pub eps: f64,
    /// Record objective and NRMSE at every iterate.
    pub trace: bool,
}

impl SolverConfig {
    pub fn new(algorithm: Algorithm, iterations: usize) -> Self {
        Self {
            algorithm,
            iterations,
            gamma: GammaMode::Auto,
            kappa: 1.0,
            rho: 0.5,
            alpha: 0.5,
            eps: 1e-12,
            trace: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::Contract(format!("rho must lie in (0, 1], got {}", self.rho)));
        }
        if !(self.kappa >= 0.0) {
            return Err(Error::Contract(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Contract(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Contract(format!("eps must be > 0, got {}", self.eps)));
        }
        if let GammaMode::Explicit(g) = self.gamma {
            if !(g > 0.0) {
                return Err(Error::Contract(format!("explicit gamma must be > 0, got {g}")));
            }
        }
        Ok(())
    }

    pub(crate) fn step_size(&self, probe: &Probe, grid: &ScanGrid) -> Result<f64> {
        match self.gamma {
            GammaMode::Auto => wf_step_size(probe, grid),
            GammaMode::Explicit(g) => Ok(g),
        }
    }
}

/// Runs the configured algorithm.
pub fn reconstruct(
    init: &ComplexGrid,
    data: &DiffractionSet,
    probe: &Probe,
    grid: &ScanGrid,
    cfg: &SolverConfig,
    reference: Option<&Reference>,
) -> Result<(ComplexGrid, ReconTrace)> {
    match cfg.algorithm {
        Algorithm::Wf => run_wf(init, data, probe, grid, cfg, reference),
        Algorithm::Awf => run_awf(init, data, probe, grid, cfg, reference),
        Algorithm::Pmace => run_pmace(init, data, probe, grid, cfg, reference),
    }
}

pub(crate) struct Clock(Instant);

impl Clock {
    pub(crate) fn start() -> Self {
        Self(Instant::now())
    }

    pub(crate) fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}
