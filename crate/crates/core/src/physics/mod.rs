//! The ptychographic measurement model.

mod forward;
mod noise;
mod probe;
mod scan;

pub use forward::{
    coverage_count, data_fidelity, embed_patch, extract_patch, forward_amplitudes, illumination_mask,
    lambda_map,
};
pub use noise::{detect_poisson, DiffractionSet, MaxScope, NoiseRecord};
pub use probe::{make_probe, Probe, ProbeKind};
pub use scan::{make_scan_grid, Location, ScanGrid};

use crate::complex::ComplexGrid;

/// A ground-truth object and where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthSample {
    pub image: ComplexGrid,
    pub seed: u64,
    pub index: u64,
}
