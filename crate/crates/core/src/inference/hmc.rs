//! Static-trajectory HMC with a diagonal metric.
//!
//! Warmup follows the usual windowed scheme: a fast initial buffer adapting
//! only the step size, doubling slow windows that estimate the metric from
//! draw variances, and a terminal step-size buffer.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::draws::{ChainStats, PosteriorDraws};
use crate::rng::{task_rng, TaskRng};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DensityError {
    /// Linear predictor outside the representable range; the point is
    /// treated as a divergence.
    #[error("linear predictor overflow (|eta| > 700)")]
    Overflow,
    #[error("log density or gradient not finite: {0}")]
    NonFinite(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HmcError {
    #[error("chain {chain}: no finite initial point after {attempts} attempts")]
    Initialization { chain: usize, attempts: usize },
    #[error("chain {chain}, iteration {iteration}: non-finite gradient ({reason}); position = {position:?}")]
    NonFiniteGradient { chain: usize, iteration: usize, reason: String, position: Vec<f64> },
    #[error("invalid sampler configuration: {0}")]
    Config(String),
}

/// A differentiable log density on an unconstrained space.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Log density up to a constant; writes the gradient into `grad`.
    fn log_density_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64, DensityError>;

    fn initial_point(&self, rng: &mut TaskRng) -> Vec<f64> {
        (0..self.dim()).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    fn output_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x[{i}]")).collect()
    }

    /// Quantities recorded per draw; defaults to the raw position.
    fn generated(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HmcConfig {
    pub chains: usize,
    pub warmup: usize,
    pub iterations: usize,
    pub seed: u64,
    pub target_accept: f64,
    /// Trajectory length in metric-scaled units.
    pub integration_time: f64,
    pub max_leapfrog: usize,
    /// Relative uniform jitter of the step size per iteration.
    pub step_jitter: f64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            warmup: 500,
            iterations: 500,
            seed: 1,
            target_accept: 0.8,
            integration_time: 2.0,
            max_leapfrog: 256,
            step_jitter: 0.2,
        }
    }
}

pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

fn divergent(h0: f64, h1: f64) -> bool {
    !h1.is_finite() || (h1 - h0).abs() > DIVERGENCE_THRESHOLD * (1.0 + h0.abs() * 1e-8)
}

struct DualAveraging {
    mu: f64,
    log_eps: f64,
    log_eps_bar: f64,
    h_bar: f64,
    t: f64,
    delta: f64,
}

impl DualAveraging {
    fn new(eps: f64, delta: f64) -> Self {
        Self { mu: (10.0 * eps).ln(), log_eps: eps.ln(), log_eps_bar: 0.0, h_bar: 0.0, t: 0.0, delta }
    }

    fn update(&mut self, accept: f64) {
        const GAMMA: f64 = 0.05;
        const T0: f64 = 10.0;
        const KAPPA: f64 = 0.75;
        self.t += 1.0;
        let w = 1.0 / (self.t + T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.delta - accept);
        self.log_eps = self.mu - self.t.sqrt() / GAMMA * self.h_bar;
        let x = self.t.powf(-KAPPA);
        self.log_eps_bar = x * self.log_eps + (1.0 - x) * self.log_eps_bar;
    }
}

/// Warmup schedule: (init buffer, slow window ends, terminal buffer start).
fn window_ends(warmup: usize) -> Vec<usize> {
    let (mut init, mut term, mut base) = (75usize, 50usize, 25usize);
    if warmup < 20 {
        return Vec::new();
    }
    if init + term + base > warmup {
        init = warmup * 15 / 100;
        term = warmup / 10;
        base = warmup - init - term;
    }
    let slow_end = warmup - term;
    let mut ends = Vec::new();
    let mut start = init;
    let mut size = base;
    while start < slow_end {
        let mut end = start + size;
        // absorb a final window that would be shorter than twice the next size
        if end + 2 * size > slow_end {
            end = slow_end;
        }
        ends.push(end);
        start = end;
        size *= 2;
    }
    ends
}

struct Chain<'a, D: LogDensity> {
    target: &'a D,
    id: usize,
    inv_metric: Vec<f64>,
    x: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
    // scratch
    xn: Vec<f64>,
    gn: Vec<f64>,
    p: Vec<f64>,
}

struct Step {
    accept: f64,
    divergent: bool,
    n_leapfrog: usize,
}

impl<'a, D: LogDensity> Chain<'a, D> {
    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().zip(&self.inv_metric).map(|(p, m)| p * p * m).sum::<f64>()
    }

    fn eval(&self, x: &[f64], g: &mut [f64], iteration: usize) -> Result<Option<f64>, HmcError> {
        match self.target.log_density_gradient(x, g) {
            Ok(lp) if lp.is_finite() && g.iter().all(|v| v.is_finite()) => Ok(Some(lp)),
            Ok(lp) if lp == f64::NEG_INFINITY => Ok(None),
            Ok(_) => Err(HmcError::NonFiniteGradient {
                chain: self.id,
                iteration,
                reason: "non-finite value".into(),
                position: x.to_vec(),
            }),
            Err(DensityError::Overflow) => Ok(None),
            Err(DensityError::NonFinite(reason)) => {
                Err(HmcError::NonFiniteGradient { chain: self.id, iteration, reason, position: x.to_vec() })
            }
        }
    }

    /// Runs `steps` leapfrog steps from the current state with momentum `p`
    /// and returns the final Hamiltonian (infinite if the trajectory failed).
    fn trajectory(&mut self, eps: f64, steps: usize, iteration: usize) -> Result<f64, HmcError> {
        self.xn.copy_from_slice(&self.x);
        self.gn.copy_from_slice(&self.grad);
        let mut lp = self.logp;
        for _ in 0..steps {
            for i in 0..self.p.len() {
                self.p[i] += 0.5 * eps * self.gn[i];
                self.xn[i] += eps * self.inv_metric[i] * self.p[i];
            }
            let mut g = std::mem::take(&mut self.gn);
            let r = self.eval(&self.xn, &mut g, iteration)?;
            self.gn = g;
            match r {
                Some(v) => lp = v,
                None => return Ok(f64::INFINITY),
            }
            for i in 0..self.p.len() {
                self.p[i] += 0.5 * eps * self.gn[i];
            }
        }
        Ok(-lp + self.kinetic(&self.p))
    }

    fn draw_momentum(&mut self, rng: &mut TaskRng) {
        for (p, m) in self.p.iter_mut().zip(&self.inv_metric) {
            let z: f64 = rng.sample(StandardNormal);
            *p = z / m.sqrt();
        }
    }

    fn transition(&mut self, eps: f64, steps: usize, rng: &mut TaskRng, iteration: usize) -> Result<Step, HmcError> {
        self.draw_momentum(rng);
        let h0 = -self.logp + self.kinetic(&self.p);
        let h1 = self.trajectory(eps, steps, iteration)?;
        if divergent(h0, h1) {
            return Ok(Step { accept: 0.0, divergent: true, n_leapfrog: steps });
        }
        let accept = (h0 - h1).exp().min(1.0);
        if rng.random::<f64>() < accept {
            std::mem::swap(&mut self.x, &mut self.xn);
            std::mem::swap(&mut self.grad, &mut self.gn);
            self.logp = -(h1 - self.kinetic(&self.p));
        }
        Ok(Step { accept, divergent: false, n_leapfrog: steps })
    }

    /// Doubles or halves the step size until one-step acceptance crosses 1/2.
    fn reasonable_step(&mut self, mut eps: f64, rng: &mut TaskRng) -> Result<f64, HmcError> {
        let mut direction = 0.0;
        for _ in 0..60 {
            self.draw_momentum(rng);
            let h0 = -self.logp + self.kinetic(&self.p);
            let h1 = self.trajectory(eps, 1, 0)?;
            let log_accept = if h1.is_finite() { h0 - h1 } else { f64::NEG_INFINITY };
            let up = log_accept > 0.5f64.ln();
            let d = if up { 1.0 } else { -1.0 };
            if direction == 0.0 {
                direction = d;
            } else if d != direction {
                break;
            }
            eps = if up { eps * 2.0 } else { eps * 0.5 };
            if !(1e-10..=1e3).contains(&eps) {
                break;
            }
        }
        Ok(eps.clamp(1e-10, 1e3))
    }
}

/// Output of one chain: recorded generated quantities per iteration.
pub struct ChainOutput {
    pub values: Vec<f64>,
    pub stats: ChainStats,
}

fn run_chain<D: LogDensity>(target: &D, config: &HmcConfig, id: usize) -> Result<ChainOutput, HmcError> {
    let mut rng = task_rng(config.seed, &[id as u64]);
    let dim = target.dim();
    let mut chain = Chain {
        target,
        id,
        inv_metric: vec![1.0; dim],
        x: Vec::new(),
        grad: vec![0.0; dim],
        logp: f64::NEG_INFINITY,
        xn: vec![0.0; dim],
        gn: vec![0.0; dim],
        p: vec![0.0; dim],
    };
    const ATTEMPTS: usize = 100;
    let mut ok = false;
    for _ in 0..ATTEMPTS {
        let x = target.initial_point(&mut rng);
        let mut g = vec![0.0; dim];
        if let Ok(Some(lp)) = chain.eval(&x, &mut g, 0) {
            chain.x = x;
            chain.grad = g;
            chain.logp = lp;
            ok = true;
            break;
        }
    }
    if !ok {
        return Err(HmcError::Initialization { chain: id, attempts: ATTEMPTS });
    }

    let ends = window_ends(config.warmup);
    let init_buffer = if 75 + 50 + 25 > config.warmup { config.warmup * 15 / 100 } else { 75 };
    let mut eps = chain.reasonable_step(1.0, &mut rng)?;
    let mut da = DualAveraging::new(eps, config.target_accept);
    let mut sum = vec![0.0; dim];
    let mut sumsq = vec![0.0; dim];
    let mut count = 0usize;
    let mut next_end = 0usize;

    let steps_for = |eps: f64, rng: &mut TaskRng| {
        let e = eps * (1.0 + config.step_jitter * (2.0 * rng.random::<f64>() - 1.0));
        let steps = ((config.integration_time / e).ceil() as usize).clamp(1, config.max_leapfrog);
        (e, steps)
    };

    for it in 0..config.warmup {
        let (e, steps) = steps_for(eps, &mut rng);
        let step = chain.transition(e, steps, &mut rng, it)?;
        da.update(step.accept);
        eps = da.log_eps.exp();
        if next_end < ends.len() && it >= init_buffer {
            for i in 0..dim {
                sum[i] += chain.x[i];
                sumsq[i] += chain.x[i] * chain.x[i];
            }
            count += 1;
            if it + 1 == ends[next_end] {
                let n = count as f64;
                for i in 0..dim {
                    let m = sum[i] / n;
                    let var = ((sumsq[i] - n * m * m) / (n - 1.0)).max(0.0);
                    chain.inv_metric[i] = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0));
                }
                sum.iter_mut().for_each(|v| *v = 0.0);
                sumsq.iter_mut().for_each(|v| *v = 0.0);
                count = 0;
                next_end += 1;
                eps = chain.reasonable_step(eps, &mut rng)?;
                da = DualAveraging::new(eps, config.target_accept);
            }
        }
    }
    if config.warmup > 0 {
        eps = da.log_eps_bar.exp();
    }

    let mut values = Vec::with_capacity(config.iterations * (dim + 1));
    let mut stats = ChainStats { step_size: eps, ..ChainStats::default() };
    let mut accept_sum = 0.0;
    for it in 0..config.iterations {
        let (e, steps) = steps_for(eps, &mut rng);
        let Step { accept, divergent, n_leapfrog } = chain.transition(e, steps, &mut rng, config.warmup + it)?;
        accept_sum += accept;
        stats.divergences += divergent as usize;
        stats.n_leapfrog += n_leapfrog;
        values.extend(target.generated(&chain.x));
        values.push(chain.logp);
    }
    stats.accept_rate = if config.iterations > 0 { accept_sum / config.iterations as f64 } else { 0.0 };
    stats.inv_metric = chain.inv_metric;
    Ok(ChainOutput { values, stats })
}

/// Runs one chain per target (targets may differ, e.g. by plug-in data) in
/// parallel. Draws carry the target's generated quantities plus `lp__`.
pub fn sample<D: LogDensity>(targets: &[D], config: &HmcConfig) -> Result<PosteriorDraws, HmcError> {
    if targets.is_empty() || config.iterations == 0 {
        return Err(HmcError::Config("need at least one chain and one iteration".into()));
    }
    if !(config.target_accept > 0.0 && config.target_accept < 1.0) {
        return Err(HmcError::Config(format!("target acceptance {} outside (0,1)", config.target_accept)));
    }
    let outputs: Vec<ChainOutput> = targets
        .par_iter()
        .enumerate()
        .map(|(id, t)| run_chain(t, config, id))
        .collect::<Result<_, _>>()?;
    let mut names = targets[0].output_names();
    names.push("lp__".into());
    let (values, stats): (Vec<_>, Vec<_>) = outputs.into_iter().map(|o| (o.values, o.stats)).unzip();
    Ok(PosteriorDraws::new(names, values, config.iterations, stats).expect("chain outputs are rectangular"))
}

/// Median absolute energy error of single leapfrog trajectories from fixed
/// start points; used to check second-order accuracy.
pub fn median_energy_error<D: LogDensity>(target: &D, x0: &[f64], eps: f64, steps: usize, reps: usize, seed: u64) -> f64 {
    let dim = target.dim();
    let mut rng = task_rng(seed, &[0]);
    let mut g = vec![0.0; dim];
    let lp = target.log_density_gradient(x0, &mut g).expect("finite start");
    let mut chain = Chain {
        target,
        id: 0,
        inv_metric: vec![1.0; dim],
        x: x0.to_vec(),
        grad: g,
        logp: lp,
        xn: vec![0.0; dim],
        gn: vec![0.0; dim],
        p: vec![0.0; dim],
    };
    let errs: Vec<f64> = (0..reps)
        .map(|_| {
            chain.draw_momentum(&mut rng);
            let h0 = -chain.logp + chain.kinetic(&chain.p);
            let h1 = chain.trajectory(eps, steps, 0).expect("finite trajectory");
            (h1 - h0).abs()
        })
        .collect();
    crate::stats::median(&errs)
}
