//! The PtychoDV network: a ViT that maps diffraction patterns to patches,
//! count-averaged stitching, and a deep-unrolled refinement that alternates
//! Wirtinger-flow data steps with a residual CNN.

mod du;
mod params;
mod vit;

pub use du::{cnn_forward, du_forward, wf_gradient_tape, wf_step_tape};
pub use params::{BoundParams, ParamStore};
pub use vit::{positional_encode, stitch, stitch_tape, vit_forward};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::complex::ComplexGrid;
use crate::error::{dim_err, Error, Result};
use crate::physics::{extract_patch, DiffractionSet, Probe, ScanGrid};
use crate::solvers::wf_step_size;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViTConfig {
    /// Width of each of the two token halves; tokens are `2 * dim` wide.
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Number of positional frequency bands `L_f`.
    pub bands: usize,
    pub patch: usize,
}

impl Default for ViTConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            depth: 4,
            heads: 4,
            mlp_ratio: 2,
            bands: 10,
            patch: 8,
        }
    }
}

impl ViTConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::Contract(format!(
                "token dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.mlp_ratio == 0 || self.patch == 0 {
            return Err(Error::Contract("mlp ratio and patch side must be positive".into()));
        }
        Ok(())
    }

    pub fn token_width(&self) -> usize {
        2 * self.dim
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vit: ViTConfig,
    /// Unroll depth `K`.
    pub unroll: usize,
    pub cnn_width: usize,
    /// One refiner shared by all unrolled steps, or one per step.
    pub shared_refiner: bool,
    /// Smoothing in `|m|_eps` inside the data steps.
    pub eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vit: ViTConfig::default(),
            unroll: 3,
            cnn_width: 32,
            shared_refiner: true,
            eps: 1e-12,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.vit.validate()?;
        if self.cnn_width == 0 {
            return Err(Error::Contract("cnn width must be positive".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Contract(format!("eps must be > 0, got {}", self.eps)));
        }
        Ok(())
    }

    pub fn refiner_count(&self) -> usize {
        match (self.unroll, self.shared_refiner) {
            (0, _) => 0,
            (_, true) => 1,
            (k, false) => k,
        }
    }
}

/// Parameters plus the architecture they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct PtychoDVModel {
    pub config: ModelConfig,
    pub params: ParamStore,
}

/// Tape handles produced by [`model_forward`].
#[derive(Clone, Copy, Debug)]
pub struct ModelOutput {
    /// Final image `[2, h, w]`.
    pub image: Var,
    /// ViT patches `[n, 2, s, s]`.
    pub patches: Var,
    /// Stitched ViT image `[2, h, w]`, the `K = 0` output.
    pub stitched: Var,
}

impl PtychoDVModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ParamStore::init(&config, seed);
        Ok(Self { config, params })
    }

    /// Forward pass without gradient bookkeeping.
    pub fn infer(&self, data: &DiffractionSet, probe: &Probe, grid: &ScanGrid) -> Result<ComplexGrid> {
        let mut tape = Tape::new();
        let bound = self.params.bind_constant(&mut tape);
        let out = model_forward(&mut tape, self, &bound, data, probe, grid)?;
        ComplexGrid::from_planar(tape.value(out.image))
    }

    /// Stitched ViT output only, the `K = 0` path of the same parameters.
    pub fn infer_stitched(&self, data: &DiffractionSet, grid: &ScanGrid) -> Result<ComplexGrid> {
        let mut tape = Tape::new();
        let bound = self.params.bind_constant(&mut tape);
        let patches = vit_forward(&mut tape, &self.config.vit, &bound, data, grid)?;
        let stitched = stitch_tape(&mut tape, patches, grid)?;
        ComplexGrid::from_planar(tape.value(stitched))
    }
}

/// ViT, stitching and `K` unrolled steps with `gamma = 1 / max Lambda_2`.
pub fn model_forward(
    tape: &mut Tape,
    model: &PtychoDVModel,
    bound: &BoundParams,
    data: &DiffractionSet,
    probe: &Probe,
    grid: &ScanGrid,
) -> Result<ModelOutput> {
    if probe.side() != model.config.vit.patch || grid.side() != model.config.vit.patch {
        return Err(dim_err!(
            "model patch side {} against probe {} and grid {}",
            model.config.vit.patch,
            probe.side(),
            grid.side()
        ));
    }
    let patches = vit_forward(tape, &model.config.vit, bound, data, grid)?;
    let stitched = stitch_tape(tape, patches, grid)?;
    let gamma = wf_step_size(probe, grid)?;
    let image = du_forward(tape, &model.config, bound, gamma, stitched, data, probe, grid)?;
    Ok(ModelOutput {
        image,
        patches,
        stitched,
    })
}

/// `||x_K - x||^2 + lambda sum_i ||x_i - D_i x||^2` over both channels.
pub fn loss(
    tape: &mut Tape,
    image: Var,
    patches: Var,
    truth: &ComplexGrid,
    grid: &ScanGrid,
    lambda: f64,
) -> Result<Var> {
    if !(lambda >= 0.0) {
        return Err(Error::Contract(format!("lambda must be >= 0, got {lambda}")));
    }
    if truth.dims() != grid.dims() {
        return Err(dim_err!("truth {:?} against grid {:?}", truth.dims(), grid.dims()));
    }
    let target = tape.constant(truth.to_planar());
    let diff = tape.sub(image, target)?;
    let image_term = tape.sum_sq(diff)?;

    let s = grid.side();
    let mut truth_patches = Vec::with_capacity(grid.len() * 2 * s * s);
    for i in 0..grid.len() {
        truth_patches.extend_from_slice(extract_patch(truth, grid, i)?.to_planar().data());
    }
    let truth_patches = tape.constant(crate::RealTensor::new(&[grid.len(), 2, s, s], truth_patches)?);
    let pdiff = tape.sub(patches, truth_patches)?;
    let patch_term = tape.sum_sq(pdiff)?;
    let patch_term = tape.scale(patch_term, lambda)?;
    tape.add(image_term, patch_term)
}
