//! Per-stratum sampling probabilities from census-style counts: Beta
//! posteriors, Beta-Binomial logistic regressions, products along the
//! sampling cascade and cross-validation.

mod classify;
mod cv;
mod design;
mod product;
mod regression;
mod stage;

use thiserror::Error;

use crate::inference::{HmcError, InferenceError};

pub use classify::{auc, best_f1_threshold, classify_new_infections, f1_score, ClassifierConfig, Classification};
pub use cv::{crossvalidate, fold_assignment, CvReport, FoldMetrics};
pub use design::{Design, DesignKind};
pub use product::{cascade_product, read_xi_draws, write_xi_draws, CascadeSpec, XiDraws};
pub use regression::{
    beta_binomial_ln_pmf, fit_betabinomial, BetaBinomialFit, BetaBinomialModel, Dispersion, RegressionPriors,
};
pub use stage::{beta_posterior, read_stage_counts, write_stage_counts, BetaParams, Role, Stage, StageCounts};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CascadeError {
    #[error("stratum `{stratum}`: {successes} successes out of {trials} trials")]
    InvalidCounts { stratum: String, trials: u64, successes: u64 },
    #[error("design has rank {rank} but {columns} columns including the intercept")]
    RankDeficient { rank: usize, columns: usize },
    #[error("labelled data contain a single class")]
    SingleClass,
    #[error("strata do not line up: {0}")]
    MisalignedStrata(String),
    #[error("fold {0} has no strata")]
    EmptyFold(usize),
    #[error("{0}")]
    Config(String),
    #[error("input: {0}")]
    Io(String),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Hmc(#[from] HmcError),
}
