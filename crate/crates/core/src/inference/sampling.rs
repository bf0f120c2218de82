use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::InferenceError;
use crate::rng::TaskRng;

/// Distribution of one sampling probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum XiPrior {
    Fixed { value: f64 },
    Beta { alpha: f64, beta: f64 },
    /// Empirical distribution of Monte Carlo draws.
    Draws { values: Vec<f64> },
}

impl XiPrior {
    pub fn fixed(value: f64) -> Self {
        XiPrior::Fixed { value }
    }

    pub fn beta(alpha: f64, beta: f64) -> Self {
        XiPrior::Beta { alpha, beta }
    }

    fn validate(&self, label: &str) -> Result<(), InferenceError> {
        let ok = match self {
            XiPrior::Fixed { value } => *value > 0.0 && *value <= 1.0,
            XiPrior::Beta { alpha, beta } => *alpha > 0.0 && *beta > 0.0 && alpha.is_finite() && beta.is_finite(),
            XiPrior::Draws { values } => !values.is_empty() && values.iter().all(|v| *v > 0.0 && *v <= 1.0),
        };
        if ok {
            Ok(())
        } else {
            Err(InferenceError::InvalidSampling(format!("{label}: {self:?} has no support in (0,1]")))
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, XiPrior::Fixed { .. })
    }

    pub fn sample(&self, rng: &mut TaskRng) -> f64 {
        match self {
            XiPrior::Fixed { value } => *value,
            XiPrior::Beta { alpha, beta } => {
                // keep strictly inside (0,1]
                Beta::new(*alpha, *beta).expect("validated").sample(rng).max(f64::MIN_POSITIVE)
            }
            XiPrior::Draws { values } => values[rng.random_range(0..values.len())],
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            XiPrior::Fixed { value } => *value,
            XiPrior::Beta { alpha, beta } => alpha / (alpha + beta),
            XiPrior::Draws { values } => crate::stats::mean(values),
        }
    }
}

/// Per-stratum source and recipient sampling-probability distributions.
///
/// When `recipient` is `None` a single probability per stratum applies to
/// both roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub source: Vec<XiPrior>,
    #[serde(default)]
    pub recipient: Option<Vec<XiPrior>>,
}

impl SamplingSpec {
    pub fn shared(xi: Vec<XiPrior>) -> Result<Self, InferenceError> {
        let s = Self { source: xi, recipient: None };
        s.validate(None)?;
        Ok(s)
    }

    pub fn split(source: Vec<XiPrior>, recipient: Vec<XiPrior>) -> Result<Self, InferenceError> {
        let s = Self { source, recipient: Some(recipient) };
        s.validate(None)?;
        Ok(s)
    }

    pub fn fixed(values: &[f64]) -> Result<Self, InferenceError> {
        Self::shared(values.iter().map(|&v| XiPrior::fixed(v)).collect())
    }

    pub fn validate(&self, n_strata: Option<usize>) -> Result<(), InferenceError> {
        if let Some(r) = &self.recipient {
            if r.len() != self.source.len() {
                return Err(InferenceError::InvalidSampling("source and recipient lengths differ".into()));
            }
        }
        if let Some(a) = n_strata {
            if self.source.len() != a {
                return Err(InferenceError::InvalidSampling(format!("{} probabilities for {a} strata", self.source.len())));
            }
        }
        for (i, p) in self.source.iter().enumerate() {
            p.validate(&format!("source {i}"))?;
        }
        for (i, p) in self.recipient.iter().flatten().enumerate() {
            p.validate(&format!("recipient {i}"))?;
        }
        Ok(())
    }

    pub fn n_strata(&self) -> usize {
        self.source.len()
    }

    pub fn is_shared(&self) -> bool {
        self.recipient.is_none()
    }

    /// Parameters in update order: sources, then recipients when split.
    pub fn params(&self) -> impl Iterator<Item = &XiPrior> {
        self.source.iter().chain(self.recipient.iter().flatten())
    }

    /// Maps a parameter vector (see [`params`](Self::params)) to per-stratum
    /// source and recipient probabilities.
    pub fn expand<'a>(&self, values: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        let a = self.n_strata();
        if self.is_shared() {
            (&values[..a], &values[..a])
        } else {
            (&values[..a], &values[a..2 * a])
        }
    }

    pub fn sample_values(&self, rng: &mut TaskRng) -> Vec<f64> {
        self.params().map(|p| p.sample(rng)).collect()
    }

    pub fn mean_values(&self) -> Vec<f64> {
        self.params().map(XiPrior::mean).collect()
    }
}
