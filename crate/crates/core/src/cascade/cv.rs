use rayon::prelude::*;
use serde::Serialize;

use super::regression::{beta_binomial_ln_pmf, fit_rows, sample_beta_binomial, BetaBinomialModel};
use super::stage::StageCounts;
use super::CascadeError;
use crate::inference::HmcConfig;
use crate::rng::{derive_seed, task_rng};
use crate::stats::{log_mean_exp, quantile_sorted, sorted};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_strata: usize,
    /// Share of held-out counts inside their 95% posterior predictive interval.
    pub coverage: f64,
    pub mae: f64,
    pub elpd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    pub folds: Vec<FoldMetrics>,
    pub coverage: f64,
    pub mae: f64,
    /// Summed over folds.
    pub elpd: f64,
}

fn id_key(id: &str) -> u64 {
    // FNV-1a, stable across platforms and releases
    id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Fold of each stratum: strata are ordered by a seeded hash of their id and
/// dealt round-robin, so folds are balanced and independent of input order.
pub fn fold_assignment(ids: &[String], folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by_key(|&i| (derive_seed(seed, &[id_key(&ids[i])]), ids[i].clone()));
    let mut out = vec![0; ids.len()];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = rank % folds;
    }
    out
}

/// K-fold cross-validation of a regression on one stage.
pub fn crossvalidate(
    model: &BetaBinomialModel,
    stage: &StageCounts,
    folds: usize,
    config: &HmcConfig,
    seed: u64,
) -> Result<CvReport, CascadeError> {
    if folds < 2 {
        return Err(CascadeError::Config("cross-validation needs at least two folds".into()));
    }
    let assign = fold_assignment(stage.ids(), folds, seed);
    if let Some(empty) = (0..folds).find(|f| !assign.contains(f)) {
        return Err(CascadeError::EmptyFold(empty));
    }
    let by_id = |rows: &mut Vec<usize>| rows.sort_by(|&a, &b| stage.ids()[a].cmp(&stage.ids()[b]));
    let metrics: Vec<(FoldMetrics, Vec<(bool, f64)>)> = (0..folds)
        .into_par_iter()
        .map(|f| {
            let mut train: Vec<usize> = (0..stage.len()).filter(|&i| assign[i] != f).collect();
            let mut test: Vec<usize> = (0..stage.len()).filter(|&i| assign[i] == f).collect();
            by_id(&mut train);
            by_id(&mut test);
            let fit = fit_rows(model, stage, &train, config)?;
            let gamma = fit.gamma_draws()?;
            let mut per = Vec::with_capacity(test.len());
            for &i in &test {
                let id = &stage.ids()[i];
                let xi = fit.draws.pooled(&format!("xi[{id}]"))?;
                let (n, k) = (stage.trials()[i], stage.successes()[i]);
                let mut rng = task_rng(seed, &[f as u64, id_key(id)]);
                // one predictive draw per posterior draw
                let sims: Vec<f64> =
                    xi.iter().zip(&gamma).map(|(&x, &g)| sample_beta_binomial(n, x, g, &mut rng) as f64).collect();
                let s = sorted(&sims);
                let (lo, hi) = (quantile_sorted(&s, 0.025), quantile_sorted(&s, 0.975));
                let covered = lo <= k as f64 && k as f64 <= hi;
                let err = (quantile_sorted(&s, 0.5) - k as f64).abs();
                let lpd: Vec<f64> = xi.iter().zip(&gamma).map(|(&x, &g)| beta_binomial_ln_pmf(n, k, x, g)).collect();
                per.push((covered, err, log_mean_exp(&lpd)));
            }
            let m = per.len() as f64;
            let fm = FoldMetrics {
                fold: f,
                n_strata: per.len(),
                coverage: per.iter().filter(|p| p.0).count() as f64 / m,
                mae: per.iter().map(|p| p.1).sum::<f64>() / m,
                elpd: per.iter().map(|p| p.2).sum(),
            };
            Ok((fm, per.into_iter().map(|p| (p.0, p.1)).collect()))
        })
        .collect::<Result<_, CascadeError>>()?;
    let all: Vec<&(bool, f64)> = metrics.iter().flat_map(|m| &m.1).collect();
    let total = all.len() as f64;
    Ok(CvReport {
        coverage: all.iter().filter(|p| p.0).count() as f64 / total,
        mae: all.iter().map(|p| p.1).sum::<f64>() / total,
        elpd: metrics.iter().map(|m| m.0.elpd).sum(),
        folds: metrics.into_iter().map(|m| m.0).collect(),
    })
}
