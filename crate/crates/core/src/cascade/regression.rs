//! Beta-Binomial logistic regression over strata.
//!
//! With mean ξ and dispersion γ the Beta shapes are a = ξ/γ and b = (1-ξ)/γ;
//! γ = 0 is the Binomial limit.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;
use statrs::function::gamma::{digamma, ln_gamma};

use super::design::Design;
use super::product::XiDraws;
use super::stage::StageCounts;
use super::CascadeError;
use crate::inference::{sample, DensityError, HmcConfig, LogDensity, PosteriorDraws};
use crate::rng::TaskRng;
use crate::stats::{logistic, logit, softplus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Dispersion {
    /// γ fixed at zero.
    Binomial,
    /// γ ~ Exponential, sampled on the log scale.
    #[default]
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressionPriors {
    pub intercept_sd: f64,
    pub coef_sd: f64,
    /// Standard deviation of differences between adjacent smoothed coefficients.
    pub icar_sd: f64,
    pub dispersion_rate: f64,
}

impl Default for RegressionPriors {
    fn default() -> Self {
        Self { intercept_sd: 10.0, coef_sd: 10f64.sqrt(), icar_sd: 1.0, dispersion_rate: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BetaBinomialModel {
    pub design: Design,
    pub dispersion: Dispersion,
    pub priors: RegressionPriors,
}

impl BetaBinomialModel {
    pub fn new(design: Design, dispersion: Dispersion) -> Self {
        Self { design, dispersion, priors: RegressionPriors::default() }
    }

    fn dim(&self) -> usize {
        1 + self.design.n_columns() + usize::from(self.dispersion == Dispersion::Estimated)
    }
}

/// `(ln Γ(x+k) - ln Γ(x), ψ(x+k) - ψ(x))`, summed directly when the gamma
/// differences would cancel badly.
fn rising(x: f64, k: u64) -> (f64, f64) {
    if k == 0 {
        return (0.0, 0.0);
    }
    if k <= 16 || x > 1e7 {
        (0..k).map(|j| x + j as f64).fold((0.0, 0.0), |(l, d), y| (l + y.ln(), d + 1.0 / y))
    } else {
        let kf = k as f64;
        (ln_gamma(x + kf) - ln_gamma(x), digamma(x + kf) - digamma(x))
    }
}

/// Log-likelihood of `k` of `n` at logit `eta` and log dispersion `u`
/// (`None` for Binomial) without the binomial coefficient, with derivatives
/// in `eta` and `u`.
fn kernel(n: u64, k: u64, eta: f64, u: Option<f64>) -> (f64, f64, f64) {
    let xi = logistic(eta);
    match u {
        None => {
            let ll = -(k as f64) * softplus(-eta) - (n - k) as f64 * softplus(eta);
            (ll, k as f64 - n as f64 * xi, 0.0)
        }
        Some(u) => {
            let s = (-u).exp();
            let (a, b) = (xi * s, logistic(-eta) * s);
            let (la, da) = rising(a, k);
            let (lb, db) = rising(b, n - k);
            let (ls, ds) = rising(s, n);
            let ll = la + lb - ls;
            let d_eta = (da - db) * a * logistic(-eta);
            let d_u = -(a * da + b * db - s * ds);
            (ll, d_eta, d_u)
        }
    }
}

/// Beta-Binomial log pmf at mean `xi` and dispersion `gamma` (0 gives the
/// Binomial).
pub fn beta_binomial_ln_pmf(n: u64, k: u64, xi: f64, gamma: f64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let u = (gamma > 0.0).then(|| gamma.ln());
    ln_binomial(n, k) + kernel(n, k, logit(xi), u).0
}

pub(crate) fn sample_beta_binomial(n: u64, xi: f64, gamma: f64, rng: &mut TaskRng) -> u64 {
    use rand_distr::{Beta, Binomial, Distribution};
    let p = if gamma > 0.0 {
        Beta::new(xi / gamma, (1.0 - xi) / gamma).map(|d| d.sample(rng)).unwrap_or(xi)
    } else {
        xi
    };
    Binomial::new(n, p.clamp(0.0, 1.0)).expect("probability in [0,1]").sample(rng)
}

struct Target<'a> {
    model: &'a BetaBinomialModel,
    stage: &'a StageCounts,
    rows: &'a [usize],
    init_logit: f64,
}

impl Target<'_> {
    fn eta(&self, x: &[f64], i: usize) -> f64 {
        x[0] + self.model.design.row(i).iter().zip(&x[1..]).map(|(d, b)| d * b).sum::<f64>()
    }

    fn log_u(&self, x: &[f64]) -> Option<f64> {
        (self.model.dispersion == Dispersion::Estimated).then(|| x[self.dim() - 1])
    }
}

impl LogDensity for Target<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn log_density_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64, DensityError> {
        let p = self.model.design.n_columns();
        let pr = &self.model.priors;
        grad.fill(0.0);
        let u = self.log_u(x);
        if u.is_some_and(|u| !(-30.0..=30.0).contains(&u)) {
            return Err(DensityError::Overflow);
        }
        let mut lp = 0.0;
        for &i in self.rows {
            let eta = self.eta(x, i);
            if eta.abs() > 700.0 {
                return Err(DensityError::Overflow);
            }
            let (ll, d_eta, d_u) = kernel(self.stage.trials()[i], self.stage.successes()[i], eta, u);
            lp += ll;
            grad[0] += d_eta;
            for (g, d) in grad[1..=p].iter_mut().zip(self.model.design.row(i)) {
                *g += d_eta * d;
            }
            if u.is_some() {
                grad[p + 1] += d_u;
            }
        }
        lp -= x[0] * x[0] / (2.0 * pr.intercept_sd * pr.intercept_sd);
        grad[0] -= x[0] / (pr.intercept_sd * pr.intercept_sd);
        let design = &self.model.design;
        for c in 0..p {
            if !design.is_smoothed(c) {
                lp -= x[1 + c] * x[1 + c] / (2.0 * pr.coef_sd * pr.coef_sd);
                grad[1 + c] -= x[1 + c] / (pr.coef_sd * pr.coef_sd);
            }
        }
        let v = pr.icar_sd * pr.icar_sd;
        for block in design.icar_blocks() {
            for w in block.windows(2) {
                let d = x[1 + w[0]] - x[1 + w[1]];
                lp -= d * d / (2.0 * v);
                grad[1 + w[0]] -= d / v;
                grad[1 + w[1]] += d / v;
            }
            // soft sum-to-zero
            let sd = 0.001 * block.len() as f64;
            let sum: f64 = block.iter().map(|&c| x[1 + c]).sum();
            lp -= sum * sum / (2.0 * sd * sd);
            for &c in block {
                grad[1 + c] -= sum / (sd * sd);
            }
        }
        if let Some(u) = u {
            // exponential prior on γ = e^u plus the log Jacobian
            let g = u.exp();
            lp += -pr.dispersion_rate * g + u;
            grad[p + 1] += -pr.dispersion_rate * g + 1.0;
        }
        if !lp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(DensityError::NonFinite(format!("log density {lp}")));
        }
        Ok(lp)
    }

    fn initial_point(&self, rng: &mut TaskRng) -> Vec<f64> {
        let mut x: Vec<f64> = (0..self.dim()).map(|_| rng.random_range(-0.5..0.5)).collect();
        x[0] += self.init_logit;
        if self.model.dispersion == Dispersion::Estimated {
            x[self.dim() - 1] = rng.random_range(-5.0..-1.0);
        }
        x
    }

    fn output_names(&self) -> Vec<String> {
        let mut names = vec!["beta0".to_string()];
        names.extend(self.model.design.columns().iter().map(|c| format!("beta[{c}]")));
        names.push("gamma".into());
        names.extend(self.stage.ids().iter().map(|id| format!("xi[{id}]")));
        names
    }

    fn generated(&self, x: &[f64]) -> Vec<f64> {
        let p = self.model.design.n_columns();
        let mut out = x[..=p].to_vec();
        out.push(self.log_u(x).map_or(0.0, f64::exp));
        out.extend((0..self.stage.len()).map(|i| logistic(self.eta(x, i))));
        out
    }
}

#[derive(Debug, Clone)]
pub struct BetaBinomialFit {
    pub draws: PosteriorDraws,
    ids: Vec<String>,
    /// Coefficients with more than half of their posterior mass beyond ±20.
    pub separated: Vec<String>,
}

impl BetaBinomialFit {
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Pooled per-stratum ξ draws.
    pub fn xi_draws(&self) -> Result<XiDraws, CascadeError> {
        let draws = self
            .ids
            .iter()
            .map(|id| self.draws.pooled(&format!("xi[{id}]")))
            .collect::<Result<Vec<_>, _>>()?;
        XiDraws::new(self.ids.clone(), draws)
    }

    pub fn gamma_draws(&self) -> Result<Vec<f64>, CascadeError> {
        Ok(self.draws.pooled("gamma")?)
    }
}

pub(crate) fn fit_rows(
    model: &BetaBinomialModel,
    stage: &StageCounts,
    rows: &[usize],
    config: &HmcConfig,
) -> Result<BetaBinomialFit, CascadeError> {
    if model.design.n_rows() != stage.len() {
        return Err(CascadeError::MisalignedStrata(format!(
            "design has {} rows for {} strata",
            model.design.n_rows(),
            stage.len()
        )));
    }
    let (n, k) = rows.iter().fold((0u64, 0u64), |(n, k), &i| (n + stage.trials()[i], k + stage.successes()[i]));
    let init_logit = logit((k as f64 + 0.5) / (n as f64 + 1.0));
    let targets: Vec<Target> = (0..config.chains).map(|_| Target { model, stage, rows, init_logit }).collect();
    let draws = sample(&targets, config)?;
    let separated = model
        .design
        .columns()
        .iter()
        .filter(|c| {
            let v = draws.pooled(&format!("beta[{c}]")).expect("recorded");
            2 * v.iter().filter(|b| b.abs() > 20.0).count() > v.len()
        })
        .cloned()
        .collect();
    Ok(BetaBinomialFit { draws, ids: stage.ids().to_vec(), separated })
}

/// Posterior over intercept, coefficients and dispersion by HMC, with
/// per-stratum ξ recorded for every draw.
pub fn fit_betabinomial(model: &BetaBinomialModel, stage: &StageCounts, config: &HmcConfig) -> Result<BetaBinomialFit, CascadeError> {
    model.design.check_rank()?;
    let rows: Vec<usize> = (0..stage.len()).collect();
    fit_rows(model, stage, &rows, config)
}
