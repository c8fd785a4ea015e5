//! Resolution-adaptive 3D convolutions.
//!
//! Convolution kernels are defined in physical (millimetre) space as sums of
//! radial functions times real spherical harmonics and realized on whatever
//! anisotropic voxel grid the data comes in. The learnable parameters never
//! depend on the voxel spacing, so one set of weights serves every grid.

pub mod autodiff;
pub mod conv;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod grid;
pub mod harmonics;
pub mod inference;
pub mod kernels;
pub mod network;
pub mod pooling;
pub mod real;
pub mod training;

pub use error::{Error, Result};
pub use grid::{Grid, GridSymmetry};
pub use harmonics::{Irrep, IrrepsSignature, UnitDirection};
pub use real::Real;
pub use kernels::{kernel_extent, CouplingPath, KernelBasis, KernelRealization, PhysicalKernelSpec, RadialBasis};
