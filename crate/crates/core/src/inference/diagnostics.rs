//! Rank-normalized split-R̂ and bulk effective sample size.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use super::draws::PosteriorDraws;
use super::InferenceError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamDiagnostics {
    pub name: String,
    /// `None` when the draws are constant.
    pub rhat: Option<f64>,
    pub ess_bulk: Option<f64>,
}

/// Splits each chain into halves, dropping the middle draw of odd lengths.
fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    chains
        .iter()
        .flat_map(|c| {
            let h = c.len() / 2;
            [c[..h].to_vec(), c[c.len() - h..].to_vec()]
        })
        .collect()
}

/// Normal scores of pooled ranks, ties averaged.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let flat: Vec<f64> = chains.concat();
    let s = flat.len();
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| flat[a].total_cmp(&flat[b]));
    let mut ranks = vec![0.0; s];
    let mut i = 0;
    while i < s {
        let mut j = i;
        while j + 1 < s && flat[order[j + 1]] == flat[order[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64 + 1.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    let normal = Normal::standard();
    let z: Vec<f64> = ranks.iter().map(|r| normal.inverse_cdf((r - 0.375) / (s as f64 + 0.25))).collect();
    let n = chains[0].len();
    z.chunks(n).map(|c| c.to_vec()).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

/// Classic R̂ on already split chains; `None` if all draws are equal.
fn rhat_basic(chains: &[Vec<f64>]) -> Option<f64> {
    let m = chains.len() as f64;
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let grand = mean(&means);
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = chains.iter().map(|c| var(c)).sum::<f64>() / m;
    if w == 0.0 {
        return if b == 0.0 { None } else { Some(f64::INFINITY) };
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    Some((var_plus / w).sqrt())
}

fn autocov(c: &[f64], lag: usize) -> f64 {
    let m = mean(c);
    let n = c.len();
    (0..n - lag).map(|i| (c[i] - m) * (c[i + lag] - m)).sum::<f64>() / n as f64
}

/// ESS via Geyer's initial monotone sequence on split chains.
fn ess_basic(chains: &[Vec<f64>]) -> Option<f64> {
    let m = chains.len();
    let n = chains[0].len();
    let total = (m * n) as f64;
    let w = chains.iter().map(|c| var(c)).sum::<f64>() / m as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let b_over_n = if m > 1 { var(&means) } else { 0.0 };
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b_over_n;
    if w == 0.0 || var_plus == 0.0 {
        return None;
    }
    let rho = |t: usize| {
        let ac = chains.iter().map(|c| autocov(c, t)).sum::<f64>() / m as f64;
        // autocov at lag 0 uses the 1/n normalisation
        1.0 - (w * (n as f64 - 1.0) / n as f64 - ac) / var_plus
    };
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let mut pair = rho(t) + rho(t + 1);
        if pair <= 0.0 {
            break;
        }
        pair = pair.min(prev);
        prev = pair;
        tau += 2.0 * pair;
        t += 2;
    }
    let tau = tau.max(1.0 / total.log10().max(1.0));
    Some(total / tau)
}

/// R̂ and bulk ESS for one parameter given per-chain draws.
pub fn rhat_ess(chains: &[Vec<f64>]) -> Result<(Option<f64>, Option<f64>), InferenceError> {
    let n = chains.first().map_or(0, Vec::len);
    if n < 4 || chains.iter().any(|c| c.len() != n) {
        return Err(InferenceError::Shape("diagnostics need equal-length chains of at least 4 draws".into()));
    }
    let halves = split(chains);
    let flat: Vec<f64> = halves.concat();
    if flat.iter().all(|v| *v == flat[0]) {
        return Ok((None, None));
    }
    let z = rank_normalize(&halves);
    let med = crate::stats::median(&flat);
    let folded: Vec<Vec<f64>> = halves.iter().map(|c| c.iter().map(|v| (v - med).abs()).collect()).collect();
    let bulk = rhat_basic(&z);
    let tail = rhat_basic(&rank_normalize(&folded));
    let rhat = match (bulk, tail) {
        (Some(a), Some(b)) => Some(a.max(b)),
        (a, b) => a.or(b),
    };
    Ok((rhat, ess_basic(&z)))
}

pub fn diagnostics(draws: &PosteriorDraws) -> Result<Vec<ParamDiagnostics>, InferenceError> {
    (0..draws.dim())
        .map(|k| {
            let chains: Vec<Vec<f64>> = (0..draws.n_chains()).map(|c| draws.chain_values(c, k)).collect();
            let (rhat, ess_bulk) = rhat_ess(&chains)?;
            Ok(ParamDiagnostics { name: draws.names()[k].clone(), rhat, ess_bulk })
        })
        .collect()
}
