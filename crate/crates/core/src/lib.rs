//! Frequency-domain ultrasound computed tomography in two dimensions.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`] and [`spectral`]: regular grids, fields on them and Fourier
//!   multipliers.
//! * [`phantom`]: procedural breast phantoms and Gaussian random media.
//! * [`solver`]: the preconditioned convergent Born series for the
//!   heterogeneous Helmholtz equation, with an independent residual check.
//! * [`acquisition`]: ring transducer arrays, point sources, receivers and
//!   full measurement tensors.
//! * [`fwi`]: adjoint-state gradients and frequency-continuation descent.
//! * [`metrics`]: RRMSE, max error, SSIM and PSNR.
//! * [`io`]: the self-describing binary entry format and corpus manifests.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquisition;
pub mod error;
pub mod fwi;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod solver;
pub mod spectral;

pub use num_complex::Complex64;

pub use acquisition::{Acquisition, MeasurementTensor, RingArray};
pub use error::{Error, Result};
pub use grid::{ComplexField2D, Field2D, Grid2D, Point2, RealField2D};
pub use phantom::{BreastType, PhantomParams, Roi, SoundSpeedMap, TissueMap};
pub use solver::{CbsConfig, HelmholtzProblem, K0Strategy, SolveReport};

/// Background (water bath) sound speed in m/s.
pub const WATER_SPEED: f64 = 1500.0;

/// Converts a frequency in Hz to an angular frequency in rad/s.
pub fn angular(freq_hz: f64) -> f64 {
    2.0 * std::f64::consts::PI * freq_hz
}
