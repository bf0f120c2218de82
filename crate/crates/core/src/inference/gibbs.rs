//! Metropolis-within-Gibbs sampler for independent Gamma flow intensities.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::draws::{ChainStats, PosteriorDraws};
use super::sampling::SamplingSpec;
use super::InferenceError;
use crate::rng::{task_rng, TaskRng};
use crate::strata::FlowCounts;

/// How the common Gamma rate is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateRule {
    /// `scale / Z(ξ)`, recomputed whenever ξ moves.
    ExpectedTotal { scale: f64 },
    Fixed { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GammaPrior {
    /// Per-cell shape; `None` means `0.8 / L`.
    pub shape: Option<f64>,
    pub rate: RateRule,
}

impl Default for GammaPrior {
    fn default() -> Self {
        Self { shape: None, rate: RateRule::ExpectedTotal { scale: 0.8 } }
    }
}

#[derive(Debug, Clone)]
pub struct GammaFlowModel {
    pub counts: FlowCounts,
    pub sampling: SamplingSpec,
    pub prior: GammaPrior,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct GibbsConfig {
    pub chains: usize,
    pub warmup: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self { chains: 4, warmup: 500, iterations: 1000, seed: 1 }
    }
}

impl GammaFlowModel {
    pub fn new(counts: FlowCounts, sampling: SamplingSpec, prior: GammaPrior) -> Result<Self, InferenceError> {
        sampling.validate(Some(counts.space().len()))?;
        let m = Self { counts, sampling, prior };
        let alpha = m.shape();
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(InferenceError::InvalidPrior(format!("shape {alpha} must be positive")));
        }
        match m.prior.rate {
            RateRule::ExpectedTotal { scale } if !(scale > 0.0 && scale.is_finite()) => {
                return Err(InferenceError::InvalidPrior(format!("rate scale {scale} must be positive")))
            }
            RateRule::Fixed { value } if !(value >= 0.0 && value.is_finite()) => {
                return Err(InferenceError::InvalidPrior(format!("rate {value} must be non-negative")))
            }
            _ => {}
        }
        Ok(m)
    }

    pub fn shape(&self) -> f64 {
        self.prior.shape.unwrap_or(0.8 / self.counts.space().n_pairs() as f64)
    }

    fn rate(&self, src: &[f64], rec: &[f64]) -> f64 {
        match self.prior.rate {
            RateRule::Fixed { value } => value,
            RateRule::ExpectedTotal { scale } => {
                let z: f64 = self
                    .counts
                    .space()
                    .pairs()
                    .iter()
                    .zip(self.counts.values())
                    .map(|(p, &n)| {
                        let q = src[p.source] * rec[p.recipient];
                        if n == 0 { (1.0 - q) / q } else { n as f64 / q }
                    })
                    .sum();
                if z > 0.0 { scale / z } else { scale }
            }
        }
    }

    pub fn output_names(&self) -> Vec<String> {
        let space = self.counts.space();
        let mut names: Vec<String> = if self.sampling.is_shared() {
            space.ids().map(|id| format!("xi[{id}]")).collect()
        } else {
            space
                .ids()
                .map(|id| format!("xi_source[{id}]"))
                .chain(space.ids().map(|id| format!("xi_recipient[{id}]")))
                .collect()
        };
        for prefix in ["lambda", "pi"] {
            names.extend((0..space.n_pairs()).map(|k| format!("{prefix}[{}]", space.pair_label(k))));
        }
        names.push("eta".into());
        names.push("rate".into());
        names
    }

    /// Pairs whose thinning probability involves each ξ parameter.
    fn touching(&self) -> Vec<Vec<usize>> {
        let space = self.counts.space();
        let a = space.len();
        let n_params = if self.sampling.is_shared() { a } else { 2 * a };
        let mut out = vec![Vec::new(); n_params];
        for (k, p) in space.pairs().iter().enumerate() {
            if self.sampling.is_shared() {
                out[p.source].push(k);
                if p.recipient != p.source {
                    out[p.recipient].push(k);
                }
            } else {
                out[p.source].push(k);
                out[a + p.recipient].push(k);
            }
        }
        out
    }
}

struct ChainState<'a> {
    model: &'a GammaFlowModel,
    touching: Vec<Vec<usize>>,
    xi: Vec<f64>,
    lambda: Vec<f64>,
    rate: f64,
    alpha: f64,
}

impl ChainState<'_> {
    fn q(&self, xi: &[f64], k: usize) -> f64 {
        let (src, rec) = self.model.sampling.expand(xi);
        let p = self.model.counts.space().pair(k);
        src[p.source] * rec[p.recipient]
    }

    fn rate_for(&self, xi: &[f64]) -> f64 {
        let (src, rec) = self.model.sampling.expand(xi);
        self.model.rate(src, rec)
    }

    /// One MH sweep over the stochastic ξ parameters; returns (accepted, proposed).
    fn update_xi(&mut self, rng: &mut TaskRng, chain: usize, iteration: usize) -> Result<(usize, usize), InferenceError> {
        let n = self.model.counts.values();
        let lambda_sum: f64 = self.lambda.iter().sum();
        let alpha_total = self.alpha * self.lambda.len() as f64;
        let priors: Vec<_> = self.model.sampling.params().cloned().collect();
        let (mut accepted, mut proposed) = (0, 0);
        for (i, prior) in priors.iter().enumerate() {
            if prior.is_fixed() {
                continue;
            }
            proposed += 1;
            let mut cand = self.xi.clone();
            cand[i] = prior.sample(rng);
            let rate_new = self.rate_for(&cand);
            let mut log_r = 0.0;
            for &k in &self.touching[i] {
                let (q0, q1) = (self.q(&self.xi, k), self.q(&cand, k));
                let nk = n[k] as f64;
                if nk > 0.0 {
                    log_r += nk * (q1.ln() - q0.ln());
                }
                log_r -= self.lambda[k] * (q1 - q0);
            }
            if rate_new != self.rate {
                log_r += alpha_total * (rate_new.ln() - self.rate.ln()) - (rate_new - self.rate) * lambda_sum;
            }
            if !log_r.is_finite() {
                return Err(InferenceError::NonFiniteRatio {
                    chain,
                    iteration,
                    state: format!("xi = {:?}, proposal = {:?}, rate = {}", self.xi, cand, self.rate),
                });
            }
            if log_r >= 0.0 || rng.random::<f64>().ln() < log_r {
                self.xi = cand;
                self.rate = rate_new;
                accepted += 1;
            }
        }
        Ok((accepted, proposed))
    }

    fn update_lambda(&mut self, rng: &mut TaskRng) {
        let n = self.model.counts.values();
        for k in 0..self.lambda.len() {
            let shape = n[k] as f64 + self.alpha;
            let rate = self.q(&self.xi, k) + self.rate;
            self.lambda[k] = Gamma::new(shape, 1.0 / rate).expect("positive shape and rate").sample(rng);
        }
    }

    fn record(&self, out: &mut Vec<f64>) {
        out.extend(&self.xi);
        out.extend(&self.lambda);
        let eta: f64 = self.lambda.iter().sum();
        out.extend(self.lambda.iter().map(|l| l / eta));
        out.push(eta);
        out.push(self.rate);
    }
}

fn run_chain(model: &GammaFlowModel, config: &GibbsConfig, chain: usize) -> Result<(Vec<f64>, ChainStats), InferenceError> {
    let mut rng = task_rng(config.seed, &[chain as u64]);
    let xi = model.sampling.sample_values(&mut rng);
    let mut state = ChainState {
        model,
        touching: model.touching(),
        rate: 0.0,
        lambda: vec![0.0; model.counts.space().n_pairs()],
        alpha: model.shape(),
        xi,
    };
    state.rate = state.rate_for(&state.xi);
    let dim = model.output_names().len();
    let mut values = Vec::with_capacity(config.iterations * dim);
    let (mut acc, mut prop) = (0usize, 0usize);
    state.update_lambda(&mut rng);
    for it in 0..config.warmup + config.iterations {
        let (a, p) = state.update_xi(&mut rng, chain, it)?;
        state.update_lambda(&mut rng);
        if it >= config.warmup {
            acc += a;
            prop += p;
            state.record(&mut values);
        }
    }
    let accept_rate = if prop > 0 { acc as f64 / prop as f64 } else { 1.0 };
    Ok((values, ChainStats { accept_rate, ..ChainStats::default() }))
}

/// Runs independent chains in parallel; with fixed ξ the MH step is skipped.
pub fn gibbs_fit(model: &GammaFlowModel, config: &GibbsConfig) -> Result<PosteriorDraws, InferenceError> {
    if config.chains == 0 || config.iterations == 0 {
        return Err(InferenceError::Shape("need at least one chain and one iteration".into()));
    }
    let outputs: Vec<_> =
        (0..config.chains).into_par_iter().map(|c| run_chain(model, config, c)).collect::<Result<_, _>>()?;
    let (values, stats) = outputs.into_iter().unzip();
    PosteriorDraws::new(model.output_names(), values, config.iterations, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::XiPrior;
    use crate::strata::{StrataSpace, Stratum};
    use std::sync::Arc;

    fn two_strata(n: Vec<u64>) -> FlowCounts {
        let space = Arc::new(StrataSpace::unmasked(vec![Stratum::plain("a"), Stratum::plain("b")]).unwrap());
        FlowCounts::new(space, n).unwrap()
    }

    #[test]
    fn names_follow_sampling_layout() {
        let shared = GammaFlowModel::new(two_strata(vec![1, 2, 3, 4]), SamplingSpec::fixed(&[0.5, 0.5]).unwrap(), GammaPrior::default())
            .unwrap();
        let names = shared.output_names();
        assert_eq!(names[0], "xi[a]");
        assert_eq!(names[2], "lambda[a->a]");
        assert_eq!(names.len(), 2 + 4 + 4 + 2);
        let split = SamplingSpec::split(vec![XiPrior::fixed(0.5); 2], vec![XiPrior::beta(2.0, 2.0); 2]).unwrap();
        let m = GammaFlowModel::new(two_strata(vec![1, 2, 3, 4]), split, GammaPrior::default()).unwrap();
        assert_eq!(m.output_names()[3], "xi_recipient[b]");
        assert_eq!(m.touching()[3], vec![1, 3]);
    }

    #[test]
    fn rejects_bad_priors() {
        let bad = GammaPrior { shape: Some(0.0), ..GammaPrior::default() };
        assert!(GammaFlowModel::new(two_strata(vec![1, 0, 0, 1]), SamplingSpec::fixed(&[1.0, 1.0]).unwrap(), bad).is_err());
        assert!(GammaFlowModel::new(two_strata(vec![1, 0, 0, 1]), SamplingSpec::fixed(&[1.0]).unwrap(), GammaPrior::default()).is_err());
    }

    #[test]
    fn same_seed_same_draws() {
        let s = SamplingSpec::shared(vec![XiPrior::beta(5.0, 5.0); 2]).unwrap();
        let m = GammaFlowModel::new(two_strata(vec![3, 1, 0, 7]), s, GammaPrior::default()).unwrap();
        let cfg = GibbsConfig { chains: 2, warmup: 10, iterations: 20, seed: 9 };
        let a = gibbs_fit(&m, &cfg).unwrap();
        let b = gibbs_fit(&m, &cfg).unwrap();
        assert_eq!(a.pooled("pi[b->b]").unwrap(), b.pooled("pi[b->b]").unwrap());
        for d in a.iter_draws() {
            let idx = a.indices_with_prefix("pi[");
            let s: f64 = idx.iter().map(|&i| d[i]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
