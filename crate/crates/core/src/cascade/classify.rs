//! Logistic classification of individuals with unknown infection timing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::CascadeError;
use crate::inference::{sample, DensityError, HmcConfig, LogDensity, PosteriorDraws};
use crate::rng::TaskRng;
use crate::stats::{logistic, median, softplus};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub hmc: HmcConfig,
    pub intercept_sd: f64,
    pub coef_sd: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { hmc: HmcConfig::default(), intercept_sd: 10.0, coef_sd: 10f64.sqrt() }
    }
}

#[derive(Debug, Clone)]
pub struct Classification {
    /// Posterior median probability of the positive class per individual.
    pub probabilities: Vec<f64>,
    /// Individuals are positive when their probability exceeds this.
    pub threshold: f64,
    pub f1: f64,
    /// On the labelled individuals.
    pub auc: f64,
    pub predicted: Vec<bool>,
    /// Label where known, prediction otherwise.
    pub classes: Vec<bool>,
    pub draws: PosteriorDraws,
}

struct Logistic<'a> {
    x: &'a [Vec<f64>],
    y: Vec<(usize, bool)>,
    intercept_sd: f64,
    coef_sd: f64,
}

impl LogDensity for Logistic<'_> {
    fn dim(&self) -> usize {
        1 + self.x[0].len()
    }

    fn log_density_gradient(&self, b: &[f64], grad: &mut [f64]) -> Result<f64, DensityError> {
        grad.fill(0.0);
        let mut lp = 0.0;
        for &(i, yi) in &self.y {
            let eta = b[0] + self.x[i].iter().zip(&b[1..]).map(|(x, b)| x * b).sum::<f64>();
            if eta.abs() > 700.0 {
                return Err(DensityError::Overflow);
            }
            let (ll, d) = if yi { (-softplus(-eta), 1.0 - logistic(eta)) } else { (-softplus(eta), -logistic(eta)) };
            lp += ll;
            grad[0] += d;
            for (g, x) in grad[1..].iter_mut().zip(&self.x[i]) {
                *g += d * x;
            }
        }
        for (j, v) in b.iter().enumerate() {
            let sd = if j == 0 { self.intercept_sd } else { self.coef_sd };
            lp -= v * v / (2.0 * sd * sd);
            grad[j] -= v / (sd * sd);
        }
        Ok(lp)
    }

    fn initial_point(&self, rng: &mut TaskRng) -> Vec<f64> {
        (0..self.dim()).map(|_| rng.random_range(-0.5..0.5)).collect()
    }

    fn output_names(&self) -> Vec<String> {
        std::iter::once("beta0".to_string()).chain((1..self.dim()).map(|j| format!("beta[{j}]"))).collect()
    }
}

/// F1 of the rule `probability > threshold` against `labels`.
pub fn f1_score(probabilities: &[f64], labels: &[bool], threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &y) in probabilities.iter().zip(labels) {
        match (p > threshold, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Threshold maximising F1. Candidates sit between consecutive distinct
/// probabilities, so every achievable split is considered.
pub fn best_f1_threshold(probabilities: &[f64], labels: &[bool]) -> (f64, f64) {
    let mut s = crate::stats::sorted(probabilities);
    s.dedup();
    let mut candidates = vec![0.0];
    candidates.extend(s.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    candidates.push(*s.last().unwrap_or(&1.0));
    candidates
        .into_iter()
        .map(|t| (t, f1_score(probabilities, labels, t)))
        .fold((0.5, f64::NEG_INFINITY), |best, c| if c.1 > best.1 { c } else { best })
}

/// Area under the ROC curve via the rank-sum statistic, ties counted half.
pub fn auc(scores: &[f64], labels: &[bool]) -> f64 {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for k in i..=j {
            ranks[order[k]] = 0.5 * (i + j) as f64 + 1.0;
        }
        i = j + 1;
    }
    let pos = labels.iter().filter(|l| **l).count() as f64;
    let neg = n as f64 - pos;
    let r: f64 = ranks.iter().zip(labels).filter(|(_, l)| **l).map(|(r, _)| r).sum();
    (r - pos * (pos + 1.0) / 2.0) / (pos * neg)
}

/// Bernoulli regression on the labelled individuals, then a F1-optimal
/// threshold on their posterior median probabilities.
pub fn classify_new_infections(
    features: &[Vec<f64>],
    labels: &[Option<bool>],
    config: &ClassifierConfig,
) -> Result<Classification, CascadeError> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(CascadeError::Config("one label slot per individual required".into()));
    }
    let p = features[0].len();
    if features.iter().any(|f| f.len() != p || f.iter().any(|v| !v.is_finite())) {
        return Err(CascadeError::Config("feature rows must be finite and of equal length".into()));
    }
    let y: Vec<(usize, bool)> = labels.iter().enumerate().filter_map(|(i, l)| l.map(|l| (i, l))).collect();
    if y.iter().all(|(_, l)| *l) || y.iter().all(|(_, l)| !*l) {
        return Err(CascadeError::SingleClass);
    }
    let targets: Vec<Logistic> = (0..config.hmc.chains)
        .map(|_| Logistic { x: features, y: y.clone(), intercept_sd: config.intercept_sd, coef_sd: config.coef_sd })
        .collect();
    let draws = sample(&targets, &config.hmc)?;
    let betas: Vec<&[f64]> = draws.iter_draws().collect();
    let probabilities: Vec<f64> = features
        .iter()
        .map(|x| {
            let etas: Vec<f64> = betas.iter().map(|b| logistic(b[0] + x.iter().zip(&b[1..]).map(|(x, b)| x * b).sum::<f64>())).collect();
            median(&etas)
        })
        .collect();
    let lp: Vec<f64> = y.iter().map(|&(i, _)| probabilities[i]).collect();
    let ly: Vec<bool> = y.iter().map(|&(_, l)| l).collect();
    let (threshold, f1) = best_f1_threshold(&lp, &ly);
    let predicted: Vec<bool> = probabilities.iter().map(|&p| p > threshold).collect();
    let classes = labels.iter().zip(&predicted).map(|(l, p)| l.unwrap_or(*p)).collect();
    Ok(Classification { auc: auc(&lp, &ly), probabilities, threshold, f1, predicted, classes, draws })
}
