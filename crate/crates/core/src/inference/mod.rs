//! Posterior inference over flow proportions.
//!
//! Two samplers share one draw container: a Metropolis-within-Gibbs scheme
//! for the independent-Gamma model, and HMC for the HSGP and exact GP
//! flow-surface models.

pub mod diagnostics;
pub mod draws;
pub mod flow_model;
pub mod gibbs;
pub mod hmc;
pub mod invgamma;
pub mod sampling;
pub mod summary;

use thiserror::Error;

pub use diagnostics::{diagnostics, rhat_ess, ParamDiagnostics};
pub use draws::{ChainStats, PosteriorDraws};
pub use flow_model::{hmc_fit, Direction, FlowModelConfig, FlowSurfaceModel, FlowTarget, InterceptStructure, SurfaceKind, XiPlugin};
pub use gibbs::{gibbs_fit, GammaFlowModel, GammaPrior, GibbsConfig, RateRule};
pub use hmc::{sample, DensityError, HmcConfig, HmcError, LogDensity};
pub use invgamma::{invgamma_cdf, invgamma_from_quantiles};
pub use sampling::{SamplingSpec, XiPrior};
pub use summary::{functional_draws, pi_draws, summarize, write_table, Functional, QuantileRow};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error("no draws")]
    EmptyDraws,
    #[error("draws shape: {0}")]
    Shape(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("io: {0}")]
    Io(String),
    #[error("invalid sampling probabilities: {0}")]
    InvalidSampling(String),
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("chain {chain}, iteration {iteration}: non-finite acceptance ratio; {state}")]
    NonFiniteRatio { chain: usize, iteration: usize, state: String },
    #[error("model: {0}")]
    Model(String),
    #[error(transparent)]
    Hsgp(#[from] crate::hsgp::HsgpError),
    #[error(transparent)]
    Hmc(#[from] HmcError),
}
