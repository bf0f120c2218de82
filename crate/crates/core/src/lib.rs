//! Bayesian estimation of origin-destination transmission flows between
//! population strata from counts thinned by stratum-specific sampling.
//!
//! Modules:
//! - [`strata`]: strata catalog, flow states, closed-form estimators, functionals
//! - [`hsgp`]: squared-exponential kernel and its reduced-rank Laplacian basis
//! - [`inference`]: Gibbs and HMC samplers, diagnostics, posterior summaries
//! - [`cascade`]: sampling-probability estimation from stage counts
//! - [`sim`]: ground-truth epidemic and flow simulators, observation thinning

pub mod cascade;
pub mod hsgp;
pub mod inference;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod strata;
