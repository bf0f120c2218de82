//! Poisson flow model with smooth age-age surfaces on the log scale.
//!
//! Each non-masked pair belongs to a direction (male to female or female to
//! male) and a location block. All blocks of a direction share one surface
//! over (source age, recipient age), represented either by an HSGP basis or
//! by an exact GP in non-centred form.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::hmc::{sample, DensityError, HmcConfig, LogDensity};
use super::invgamma::invgamma_from_quantiles;
use super::sampling::SamplingSpec;
use super::{InferenceError, PosteriorDraws};
use crate::hsgp::{domain_with_scheme, DomainScheme, HsgpBasis, DEFAULT_BOUNDARY_FACTOR, DEFAULT_M};
use crate::rng::{task_rng, TaskRng};
use crate::strata::{FlowCounts, Gender, StrataSpace};

const ETA_LIMIT: f64 = 700.0;
/// Bound on log σ and log ℓ; beyond it exponentials lose all precision.
const HYPER_LIMIT: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "mf")]
    MaleToFemale,
    #[serde(rename = "fm")]
    FemaleToMale,
}

impl Direction {
    pub fn label(self) -> &'static str {
        match self {
            Direction::MaleToFemale => "mf",
            Direction::FemaleToMale => "fm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurfaceKind {
    Hsgp {
        #[serde(default = "default_factor")]
        boundary_factor: f64,
        #[serde(default = "default_m")]
        m: usize,
        #[serde(default)]
        scheme: DomainScheme,
    },
    /// Dense GP; `jitter` is relative to the marginal variance.
    Exact {
        #[serde(default = "default_jitter")]
        jitter: f64,
    },
}

fn default_factor() -> f64 {
    DEFAULT_BOUNDARY_FACTOR
}

fn default_m() -> usize {
    DEFAULT_M
}

fn default_jitter() -> f64 {
    1e-6
}

impl Default for SurfaceKind {
    fn default() -> Self {
        SurfaceKind::Hsgp { boundary_factor: DEFAULT_BOUNDARY_FACTOR, m: DEFAULT_M, scheme: DomainScheme::Centered }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterceptStructure {
    /// One intercept per (direction, source location, recipient location).
    PerBlock,
    /// Baseline `mu` plus a male-to-female offset `nu`.
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowModelConfig {
    pub surface: SurfaceKind,
    /// Defaults to per-block when strata carry locations.
    pub intercepts: Option<InterceptStructure>,
    pub intercept_sd: f64,
    /// Scale of the Half-Normal prior on the marginal variance.
    pub sigma2_sd: f64,
    /// Central interval matched by the Inverse-Gamma length-scale priors;
    /// defaults to [smallest input gap, input range] per dimension.
    pub lengthscale_quantiles: Option<[f64; 2]>,
    pub lengthscale_mass: f64,
}

impl Default for FlowModelConfig {
    fn default() -> Self {
        Self {
            surface: SurfaceKind::default(),
            intercepts: None,
            intercept_sd: 10.0,
            sigma2_sd: 10.0,
            lengthscale_quantiles: None,
            lengthscale_mass: 0.99,
        }
    }
}

enum Engine {
    Hsgp(HsgpBasis),
    Exact { sqd: [Vec<f64>; 2], jitter: f64 },
}

struct Surface {
    direction: Direction,
    inputs: Vec<[f64; 2]>,
    engine: Engine,
    /// Inverse-Gamma (shape, scale) per input dimension.
    ls_prior: [(f64, f64); 2],
    offset: usize,
}

impl Surface {
    fn n_latent(&self) -> usize {
        match &self.engine {
            Engine::Hsgp(b) => b.m(),
            Engine::Exact { .. } => self.inputs.len(),
        }
    }

    fn n_params(&self) -> usize {
        3 + self.n_latent()
    }
}

/// Intermediate values kept between the forward and backward passes.
enum Cache {
    Hsgp { w: Vec<f64> },
    Exact { l: DMatrix<f64>, r: DMatrix<f64> },
}

/// Structure shared by all chains; per-chain thinning enters via [`FlowTarget`].
pub struct FlowSurfaceModel {
    counts: FlowCounts,
    n: Vec<f64>,
    surfaces: Vec<Surface>,
    cell_surface: Vec<usize>,
    cell_input: Vec<usize>,
    cell_intercepts: Vec<(usize, Option<usize>)>,
    intercept_names: Vec<String>,
    intercept_sd: f64,
    sigma2_sd: f64,
    dim: usize,
}

fn direction_of(space: &StrataSpace, k: usize) -> Result<Direction, InferenceError> {
    let p = space.pair(k);
    match (space.stratum(p.source).gender, space.stratum(p.recipient).gender) {
        (Gender::M, Gender::F) => Ok(Direction::MaleToFemale),
        (Gender::F, Gender::M) => Ok(Direction::FemaleToMale),
        _ => Err(InferenceError::Model(format!("pair {} is not between men and women", space.pair_label(k)))),
    }
}

fn lengthscale_prior(values: impl Iterator<Item = f64>, config: &FlowModelConfig) -> Result<(f64, f64), InferenceError> {
    let [lo, hi] = match config.lengthscale_quantiles {
        Some(q) => q,
        None => {
            let mut v: Vec<f64> = values.collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            let gap = v.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
            let range = v.last().copied().unwrap_or(0.0) - v.first().copied().unwrap_or(0.0);
            if !(gap.is_finite() && range > gap) {
                return Err(InferenceError::Model("need at least three distinct ages per dimension".into()));
            }
            [gap, range]
        }
    };
    invgamma_from_quantiles(lo, hi, config.lengthscale_mass)
}

impl FlowSurfaceModel {
    pub fn new(counts: FlowCounts, config: &FlowModelConfig) -> Result<Self, InferenceError> {
        let space = counts.space().clone();
        let has_locations = space.strata().iter().any(|s| s.location.is_some());
        let structure = config
            .intercepts
            .unwrap_or(if has_locations { InterceptStructure::PerBlock } else { InterceptStructure::Shared });
        if !(config.intercept_sd > 0.0 && config.sigma2_sd > 0.0) {
            return Err(InferenceError::InvalidPrior("prior scales must be positive".into()));
        }

        let mut dir_inputs: Vec<(Direction, Vec<[f64; 2]>)> = Vec::new();
        let mut block_names: Vec<String> = Vec::new();
        let mut cell_surface = Vec::new();
        let mut cell_input = Vec::new();
        let mut cell_intercepts = Vec::new();
        for k in 0..space.n_pairs() {
            let dir = direction_of(&space, k)?;
            let p = space.pair(k);
            let (s, r) = (space.stratum(p.source), space.stratum(p.recipient));
            let (Some(sa), Some(ra)) = (s.age, r.age) else {
                return Err(InferenceError::Model(format!("pair {} lacks ages", space.pair_label(k))));
            };
            let x = [sa.midpoint(), ra.midpoint()];
            let si = dir_inputs.iter().position(|(d, _)| *d == dir).unwrap_or_else(|| {
                dir_inputs.push((dir, Vec::new()));
                dir_inputs.len() - 1
            });
            let inputs = &mut dir_inputs[si].1;
            let ii = inputs.iter().position(|v| *v == x).unwrap_or_else(|| {
                inputs.push(x);
                inputs.len() - 1
            });
            cell_surface.push(si);
            cell_input.push(ii);
            let intercepts = match structure {
                InterceptStructure::PerBlock => {
                    let name = if has_locations {
                        format!(
                            "mu[{}:{}->{}]",
                            dir.label(),
                            s.location.as_deref().unwrap_or(""),
                            r.location.as_deref().unwrap_or("")
                        )
                    } else {
                        format!("mu[{}]", dir.label())
                    };
                    let b = block_names.iter().position(|n| *n == name).unwrap_or_else(|| {
                        block_names.push(name);
                        block_names.len() - 1
                    });
                    (b, None)
                }
                InterceptStructure::Shared => (0, (dir == Direction::MaleToFemale).then_some(1)),
            };
            cell_intercepts.push(intercepts);
        }
        let intercept_names = match structure {
            InterceptStructure::PerBlock => block_names,
            InterceptStructure::Shared => vec!["mu".into(), "nu".into()],
        };

        let mut offset = intercept_names.len();
        let mut surfaces = Vec::new();
        for (direction, inputs) in dir_inputs {
            let ls_prior = [
                lengthscale_prior(inputs.iter().map(|x| x[0]), config)?,
                lengthscale_prior(inputs.iter().map(|x| x[1]), config)?,
            ];
            let engine = match config.surface {
                SurfaceKind::Hsgp { boundary_factor, m, scheme } => {
                    let domain = domain_with_scheme(&inputs, boundary_factor, scheme)?;
                    Engine::Hsgp(HsgpBasis::build(&inputs, domain, m, m)?)
                }
                SurfaceKind::Exact { jitter } => {
                    let n = inputs.len();
                    let sq = |d: usize| {
                        let mut v = vec![0.0; n * n];
                        for i in 0..n {
                            for j in 0..n {
                                v[i * n + j] = (inputs[i][d] - inputs[j][d]).powi(2);
                            }
                        }
                        v
                    };
                    Engine::Exact { sqd: [sq(0), sq(1)], jitter }
                }
            };
            let s = Surface { direction, inputs, engine, ls_prior, offset };
            offset += s.n_params();
            surfaces.push(s);
        }
        let n = counts.as_f64();
        Ok(Self {
            counts,
            n,
            surfaces,
            cell_surface,
            cell_input,
            cell_intercepts,
            intercept_names,
            intercept_sd: config.intercept_sd,
            sigma2_sd: config.sigma2_sd,
            dim: offset,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn space(&self) -> &Arc<StrataSpace> {
        self.counts.space()
    }

    pub fn counts(&self) -> &FlowCounts {
        &self.counts
    }

    /// Names of every unconstrained coordinate.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = self.intercept_names.clone();
        for s in &self.surfaces {
            let d = s.direction.label();
            names.push(format!("log_sigma[{d}]"));
            names.push(format!("log_ell1[{d}]"));
            names.push(format!("log_ell2[{d}]"));
            names.extend((0..s.n_latent()).map(|j| format!("z[{d}][{j}]")));
        }
        names
    }

    /// Offset of the first hyperparameter of the surface for `direction`.
    pub fn surface_offset(&self, direction: Direction) -> Option<usize> {
        self.surfaces.iter().find(|s| s.direction == direction).map(|s| s.offset)
    }

    pub fn n_intercepts(&self) -> usize {
        self.intercept_names.len()
    }

    /// Log prior of the length-scale and variance coordinates plus gradient.
    fn hyper_prior(&self, s: &Surface, u: &[f64], g: &mut [f64]) -> f64 {
        let v = 2.0 * self.sigma2_sd * self.sigma2_sd;
        let e4 = (4.0 * u[0]).exp();
        let mut lp = -e4 / v + 2.0 * u[0];
        g[0] += -4.0 * e4 / v + 2.0;
        for d in 0..2 {
            let (a, b) = s.ls_prior[d];
            let e = (-u[1 + d]).exp();
            lp += -a * u[1 + d] - b * e;
            g[1 + d] += -a + b * e;
        }
        lp
    }

    fn forward(&self, s: &Surface, theta: &[f64]) -> Result<(Vec<f64>, Cache), DensityError> {
        let (sigma, l1, l2) = (theta[0].exp(), theta[1].exp(), theta[2].exp());
        let latent = &theta[3..];
        match &s.engine {
            Engine::Hsgp(basis) => {
                let base = theta[0] + 0.5 * (2.0 * PI).ln() + 0.5 * (theta[1] + theta[2]);
                let w: Vec<f64> = basis
                    .sqrt_lambda()
                    .iter()
                    .map(|om| (base - 0.25 * (l1 * l1 * om[0] * om[0] + l2 * l2 * om[1] * om[1])).exp())
                    .collect();
                let v: Vec<f64> = w.iter().zip(latent).map(|(w, b)| w * b).collect();
                let f = (0..basis.n_inputs()).map(|i| basis.phi_row(i).iter().zip(&v).map(|(p, v)| p * v).sum()).collect();
                Ok((f, Cache::Hsgp { w }))
            }
            Engine::Exact { sqd, jitter } => {
                let n = s.inputs.len();
                let (c1, c2) = (0.5 / (l1 * l1), 0.5 / (l2 * l2));
                let r = DMatrix::from_fn(n, n, |i, j| (-(c1 * sqd[0][i * n + j] + c2 * sqd[1][i * n + j])).exp());
                let s2 = sigma * sigma;
                let k = DMatrix::from_fn(n, n, |i, j| s2 * (r[(i, j)] + if i == j { *jitter } else { 0.0 }));
                let Some(chol) = k.cholesky() else {
                    return Err(DensityError::Overflow);
                };
                let l = chol.l();
                let z = nalgebra::DVector::from_column_slice(latent);
                let f = (&l * z).as_slice().to_vec();
                Ok((f, Cache::Exact { l, r }))
            }
        }
    }

    /// Adds the surface's contribution (latent prior and chain rule through
    /// `h = d loglik / d f`) to `g`; returns the latent prior term.
    fn backward(&self, s: &Surface, theta: &[f64], cache: &Cache, h: &[f64], g: &mut [f64]) -> f64 {
        let latent = &theta[3..];
        let lp = -0.5 * latent.iter().map(|b| b * b).sum::<f64>();
        match (&s.engine, cache) {
            (Engine::Hsgp(basis), Cache::Hsgp { w }) => {
                let m = basis.m();
                let mut t = vec![0.0; m];
                for (i, hi) in h.iter().enumerate() {
                    if *hi != 0.0 {
                        for (tj, p) in t.iter_mut().zip(basis.phi_row(i)) {
                            *tj += hi * p;
                        }
                    }
                }
                let (l1s, l2s) = ((2.0 * theta[1]).exp(), (2.0 * theta[2]).exp());
                for (j, om) in basis.sqrt_lambda().iter().enumerate() {
                    g[3 + j] += t[j] * w[j] - latent[j];
                    let gw = t[j] * latent[j] * w[j];
                    g[0] += gw;
                    g[1] += gw * 0.5 * (1.0 - l1s * om[0] * om[0]);
                    g[2] += gw * 0.5 * (1.0 - l2s * om[1] * om[1]);
                }
            }
            (Engine::Exact { sqd, jitter }, Cache::Exact { l, r }) => {
                let n = s.inputs.len();
                let hv = nalgebra::DVector::from_column_slice(h);
                let z = nalgebra::DVector::from_column_slice(latent);
                let gz = l.transpose() * &hv;
                for j in 0..n {
                    g[3 + j] += gz[j] - z[j];
                }
                // reverse-mode Cholesky: Lbar = tril(h z^T)
                let lbar = DMatrix::from_fn(n, n, |i, j| if j <= i { h[i] * z[j] } else { 0.0 });
                let mut p = l.transpose() * lbar;
                for i in 0..n {
                    for j in 0..n {
                        if j > i {
                            p[(i, j)] = 0.0;
                        } else if i == j {
                            p[(i, j)] *= 0.5;
                        }
                    }
                }
                let lt = l.transpose();
                let a = lt.solve_upper_triangular(&p).expect("non-singular factor");
                let st = lt.solve_upper_triangular(&a.transpose()).expect("non-singular factor");
                let s2 = (2.0 * theta[0]).exp();
                let (i1, i2) = ((-2.0 * theta[1]).exp(), (-2.0 * theta[2]).exp());
                let (mut gs, mut g1, mut g2) = (0.0, 0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        let gij = 0.5 * (st[(i, j)] + st[(j, i)]);
                        let kr = s2 * r[(i, j)];
                        let kij = kr + if i == j { s2 * jitter } else { 0.0 };
                        gs += gij * 2.0 * kij;
                        g1 += gij * kr * sqd[0][i * n + j] * i1;
                        g2 += gij * kr * sqd[1][i * n + j] * i2;
                    }
                }
                g[0] += gs;
                g[1] += g1;
                g[2] += g2;
            }
            _ => unreachable!("cache matches engine"),
        }
        lp
    }

    /// Log intensity (without thinning offset) per pair.
    pub fn log_intensity(&self, x: &[f64]) -> Result<Vec<f64>, DensityError> {
        let fs: Vec<Vec<f64>> = self
            .surfaces
            .iter()
            .map(|s| self.forward(s, &x[s.offset..s.offset + s.n_params()]).map(|(f, _)| f))
            .collect::<Result<_, _>>()?;
        Ok((0..self.n.len())
            .map(|k| {
                let (a, b) = self.cell_intercepts[k];
                x[a] + b.map_or(0.0, |b| x[b]) + fs[self.cell_surface[k]][self.cell_input[k]]
            })
            .collect())
    }

    /// Log posterior and gradient given per-pair log thinning offsets.
    pub fn log_posterior_and_gradient(&self, x: &[f64], log_q: &[f64], grad: &mut [f64]) -> Result<f64, DensityError> {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut lp = 0.0;
        let iv = 1.0 / (self.intercept_sd * self.intercept_sd);
        for i in 0..self.intercept_names.len() {
            lp -= 0.5 * x[i] * x[i] * iv;
            grad[i] = -x[i] * iv;
        }
        let mut evals = Vec::with_capacity(self.surfaces.len());
        for s in &self.surfaces {
            if x[s.offset..s.offset + 3].iter().any(|u| !(u.abs() <= HYPER_LIMIT)) {
                return Err(DensityError::Overflow);
            }
            evals.push(self.forward(s, &x[s.offset..s.offset + s.n_params()])?);
        }
        let mut hs: Vec<Vec<f64>> = self.surfaces.iter().map(|s| vec![0.0; s.inputs.len()]).collect();
        for k in 0..self.n.len() {
            let (a, b) = self.cell_intercepts[k];
            let (si, ii) = (self.cell_surface[k], self.cell_input[k]);
            let eta = x[a] + b.map_or(0.0, |b| x[b]) + evals[si].0[ii] + log_q[k];
            if !(eta.abs() <= ETA_LIMIT) {
                return Err(DensityError::Overflow);
            }
            let mu = eta.exp();
            lp += self.n[k] * eta - mu;
            let r = self.n[k] - mu;
            grad[a] += r;
            if let Some(b) = b {
                grad[b] += r;
            }
            hs[si][ii] += r;
        }
        for ((s, (_, cache)), h) in self.surfaces.iter().zip(&evals).zip(&hs) {
            let range = s.offset..s.offset + s.n_params();
            lp += self.hyper_prior(s, &x[range.clone()], &mut grad[range.clone()]);
            lp += self.backward(s, &x[range.clone()], cache, h, &mut grad[range]);
        }
        if !lp.is_finite() {
            return Err(DensityError::NonFinite(format!("log density {lp}")));
        }
        Ok(lp)
    }

    pub fn output_names(&self) -> Vec<String> {
        let space = self.space();
        let mut names = self.intercept_names.clone();
        for s in &self.surfaces {
            let d = s.direction.label();
            names.push(format!("sigma[{d}]"));
            names.push(format!("ell1[{d}]"));
            names.push(format!("ell2[{d}]"));
        }
        for prefix in ["lambda", "pi"] {
            names.extend((0..space.n_pairs()).map(|k| format!("{prefix}[{}]", space.pair_label(k))));
        }
        names
    }

    fn generated(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x[..self.intercept_names.len()].to_vec();
        for s in &self.surfaces {
            out.extend(x[s.offset..s.offset + 3].iter().map(|u| u.exp()));
        }
        let lambda: Vec<f64> = match self.log_intensity(x) {
            Ok(eta) => eta.iter().map(|e| e.exp()).collect(),
            Err(_) => vec![f64::NAN; self.n.len()],
        };
        let total: f64 = lambda.iter().sum();
        out.extend(&lambda);
        out.extend(lambda.iter().map(|l| l / total));
        out
    }

    /// Per-pair `log(ξ_a ξ_b)` for given per-stratum probabilities.
    pub fn log_offsets(&self, xi_source: &[f64], xi_recipient: &[f64]) -> Vec<f64> {
        self.space().pairs().iter().map(|p| (xi_source[p.source] * xi_recipient[p.recipient]).ln()).collect()
    }

    pub fn target(&self, log_q: Vec<f64>) -> FlowTarget<'_> {
        FlowTarget { model: self, log_q }
    }
}

/// The model with thinning offsets fixed, as sampled by one chain.
pub struct FlowTarget<'a> {
    model: &'a FlowSurfaceModel,
    log_q: Vec<f64>,
}

impl LogDensity for FlowTarget<'_> {
    fn dim(&self) -> usize {
        self.model.dim
    }

    fn log_density_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64, DensityError> {
        self.model.log_posterior_and_gradient(x, &self.log_q, grad)
    }

    fn initial_point(&self, rng: &mut TaskRng) -> Vec<f64> {
        use rand::Rng;
        let m = self.model;
        // intercepts near the log of the mean count per cell keep exp() tame
        let scale = (m.n.iter().sum::<f64>() / m.n.len() as f64).max(0.1).ln();
        let mut x: Vec<f64> = (0..m.dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        for v in x.iter_mut().take(m.intercept_names.len()) {
            *v = scale + rng.random_range(-0.5..0.5);
        }
        x
    }

    fn output_names(&self) -> Vec<String> {
        self.model.output_names()
    }

    fn generated(&self, x: &[f64]) -> Vec<f64> {
        self.model.generated(x)
    }
}

/// How sampling probabilities enter the surface model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XiPlugin {
    /// One draw per chain.
    #[default]
    DrawPerChain,
    Mean,
}

/// Fits the surface model by HMC with ξ plugged in per chain.
pub fn hmc_fit(
    model: &FlowSurfaceModel,
    sampling: &SamplingSpec,
    plugin: XiPlugin,
    config: &HmcConfig,
) -> Result<PosteriorDraws, InferenceError> {
    sampling.validate(Some(model.space().len()))?;
    let targets: Vec<FlowTarget> = (0..config.chains)
        .map(|c| {
            let values = match plugin {
                XiPlugin::Mean => sampling.mean_values(),
                XiPlugin::DrawPerChain => sampling.sample_values(&mut task_rng(config.seed, &[1, c as u64])),
            };
            let (src, rec) = sampling.expand(&values);
            model.target(model.log_offsets(src, rec))
        })
        .collect();
    Ok(sample(&targets, config)?)
}

/// Unique surface inputs per direction, for building simulators and plots.
pub fn surface_inputs(model: &FlowSurfaceModel) -> HashMap<Direction, Vec<[f64; 2]>> {
    model.surfaces.iter().map(|s| (s.direction, s.inputs.clone())).collect()
}
