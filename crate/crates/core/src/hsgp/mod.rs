//! Squared-exponential kernel, its spectral density and the reduced-rank
//! Laplacian eigenbasis used to approximate 2D Gaussian-process surfaces.

mod basis;
mod kernel;

use thiserror::Error;

pub use basis::{
    build_basis, domain_from_inputs, domain_with_scheme, eigenfunction, eigenvalue, gram_error, hsgp_draw, hsgp_gram,
    Domain, DomainScheme, HsgpBasis,
};
pub use kernel::{exact_gram, se_kernel, spectral_density, SeKernelParams};

/// Default boundary factor and per-dimension basis size.
pub const DEFAULT_BOUNDARY_FACTOR: f64 = 1.25;
pub const DEFAULT_M: usize = 30;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HsgpError {
    #[error("kernel parameters must be positive and finite (sigma2={sigma2}, l1={l1}, l2={l2})")]
    InvalidKernel { sigma2: f64, l1: f64, l2: f64 },
    #[error("boundary factor must be >= 1, got {0}")]
    InvalidFactor(f64),
    #[error("input range has zero width in some dimension")]
    DegenerateInputs,
    #[error("input {index} at {point:?} lies outside the approximation box")]
    OutsideBox { index: usize, point: [f64; 2] },
    #[error("basis needs at least one function per dimension")]
    EmptyBasis,
    #[error("expected {expected} coefficients, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}
