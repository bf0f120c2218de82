//! Strata catalog, flow states, closed-form estimators and summary functionals.

mod estimators;
mod flows;
mod functionals;
pub mod io;
mod scores;
mod space;

use thiserror::Error;

pub use estimators::{expected_total, expected_total_split, mle_estimate, mle_with_probabilities, naive_estimate, SampledCount};
pub use flows::{FlowCounts, FlowIntensities, FlowProportions, FlowState, StrataMapping};
pub use functionals::{flow_ratio_of, recipients_of, sources_of, FlowRatio, SummaryFunctionals};
pub use scores::{counts_from_scores, Individual, ScoreMatrix, DEFAULT_ZETA};
pub use space::{AgeBand, Gender, Pair, Stratum, StrataSpace};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StrataError {
    #[error("strata catalog is empty")]
    Empty,
    #[error("duplicate stratum id `{0}`")]
    DuplicateStratum(String),
    #[error("unknown stratum id `{0}`")]
    UnknownStratum(String),
    #[error("every ordered pair is structurally zero")]
    AllMasked,
    #[error("expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("flow entry {0} is negative or not finite")]
    InvalidFlowValue(usize),
    #[error("proportions sum to {0}, not 1")]
    NotOnSimplex(f64),
    #[error("events on structurally zero pairs: {0}")]
    MaskedPairs(String),
    #[error("estimator undefined: {0}")]
    EstimatorUndefined(String),
    #[error("sampling probability {value} for stratum `{stratum}` outside (0,1]")]
    InvalidProbability { stratum: String, value: f64 },
    #[error("mapping does not cover stratum `{0}`")]
    MappingIncomplete(String),
    #[error("threshold must lie in (0,1), got {0}")]
    InvalidThreshold(f64),
    #[error("invalid score: {0}")]
    InvalidScore(String),
    #[error("flow states live on different strata spaces")]
    SpaceMismatch,
    #[error("functional undefined: {0}")]
    UndefinedFunctional(String),
    #[error("{0}")]
    Parse(String),
    #[error("input: {0}")]
    Input(String),
}
