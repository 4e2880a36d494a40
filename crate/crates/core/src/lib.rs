//! Ptychographic imaging toolkit.
//!
//! * [`physics`]: probes, scan grids, patch operators, the far-field forward
//!   model and the Poisson detector.
//! * [`solvers`]: Wirtinger Flow, Nesterov-accelerated WF and PMACE.
//! * [`net`]: the PtychoDV network (transformer over measurement tokens,
//!   stitching, and unrolled WF steps with a shared CNN refiner).
//! * [`train`]: phantom generation, Adam, the training loop, checkpoints.
//! * [`metrics`]: phase-aligned NRMSE and Table-style reports.
//! * [`harness`]: tensor files, configs, PGM export and the experiment
//!   runners behind the `ptycho` binary.

pub mod autodiff;
pub mod complex;
pub mod error;
pub mod fft;
pub mod harness;
pub mod metrics;
pub mod net;
pub mod physics;
pub mod solvers;
pub mod tensor;
pub mod train;

pub use complex::ComplexGrid;
pub use error::{Error, Result};
pub use num_complex::Complex64;
pub use tensor::RealTensor;
