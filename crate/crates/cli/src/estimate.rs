//! `odflow estimate-sampling`: per-stratum ξ draws from cascade stage counts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use odflow::cascade::{
    beta_posterior, crossvalidate, fit_betabinomial, read_stage_counts, write_xi_draws, BetaBinomialModel, CascadeSpec,
    CvReport, Design, DesignKind, Dispersion, RegressionPriors, Role, Stage, StageCounts, XiDraws,
};
use odflow::inference::{rhat_ess, HmcConfig};
use odflow::rng::{derive_seed, task_rng};
use odflow::strata::io::read_strata;
use serde::Deserialize;

use crate::error::{CliError, CliResult};
use crate::run::{Run, DEFAULT_SEED};
use crate::tables::csv_writer;

fn half() -> f64 {
    0.5
}

fn default_folds() -> usize {
    5
}

fn default_draws() -> usize {
    1000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum Method {
    /// Independent Beta posterior per stratum.
    Beta {
        #[serde(default = "half")]
        alpha: f64,
        #[serde(default = "half")]
        beta: f64,
    },
    /// Beta-Binomial logistic regression across strata.
    Regression {
        #[serde(default)]
        design: DesignKind,
        #[serde(default)]
        dispersion: Dispersion,
        #[serde(default)]
        icar: bool,
        #[serde(default)]
        priors: RegressionPriors,
        #[serde(default)]
        hmc: HmcConfig,
        /// Zero disables cross-validation.
        #[serde(default = "default_folds")]
        cv_folds: usize,
    },
}

impl Default for Method {
    fn default() -> Self {
        Method::Beta { alpha: 0.5, beta: 0.5 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EstimateConfig {
    seed: Option<u64>,
    #[serde(default)]
    method: Method,
    /// Draws written per stratum.
    #[serde(default = "default_draws")]
    draws: usize,
    /// Derived from the stage roles when omitted.
    #[serde(default)]
    cascade: Option<CascadeSpec>,
}

/// Source stages are those with role source or both; likewise recipients.
fn default_cascade(stages: &[StageCounts]) -> CascadeSpec {
    let pick = |skip: Role| {
        let mut v: Vec<Stage> = stages.iter().filter(|s| s.role != skip).map(|s| s.stage).collect();
        v.dedup();
        v
    };
    CascadeSpec { source: pick(Role::Recipient), recipient: pick(Role::Source) }
}

fn beta_draws(stage: &StageCounts, alpha: f64, beta: f64, n: usize, seed: u64) -> CliResult<XiDraws> {
    let draws = beta_posterior(stage, alpha, beta)
        .iter()
        .zip(stage.ids())
        .map(|(b, id)| {
            let mut rng = task_rng(seed, &[id_hash(id)]);
            (0..n).map(|_| b.sample(&mut rng).max(f64::MIN_POSITIVE)).collect()
        })
        .collect();
    XiDraws::new(stage.ids().to_vec(), draws).map_err(CliError::runtime)
}

fn id_hash(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

pub fn cmd_estimate_sampling(
    stage_files: &[PathBuf],
    strata_file: Option<&Path>,
    config: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
) -> CliResult<()> {
    let mut run = Run::new("estimate-sampling", out)?;
    let cfg: EstimateConfig = run.read_config(config)?;
    let seed = seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    run.set_seed(seed);
    if cfg.draws == 0 {
        return Err(CliError::Input("draws: must be positive".into()));
    }
    if stage_files.is_empty() {
        return Err(CliError::Input("at least one --stages file is required".into()));
    }
    let mut stages: Vec<StageCounts> = Vec::new();
    for f in stage_files {
        let bytes = run.read_input(f)?;
        let parsed = read_stage_counts(bytes.as_slice()).map_err(|e| CliError::Input(format!("{}: {e}", f.display())))?;
        stages.extend(parsed);
    }
    let mut seen = BTreeMap::new();
    for s in &stages {
        if seen.insert(s.stage, s.role).is_some() {
            return Err(CliError::Input(format!("stage `{}` appears more than once", s.stage)));
        }
    }
    let cascade = cfg.cascade.clone().unwrap_or_else(|| default_cascade(&stages));
    if cascade.source.is_empty() || cascade.recipient.is_empty() {
        return Err(CliError::Input("cascade: source and recipient need at least one stage".into()));
    }

    let strata = match strata_file {
        Some(p) => {
            let bytes = run.read_input(p)?;
            Some(read_strata(bytes.as_slice()).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };

    let mut per_stage: BTreeMap<Stage, XiDraws> = BTreeMap::new();
    let mut cv_rows: Vec<(Stage, CvReport)> = Vec::new();
    for (si, stage) in stages.iter().enumerate() {
        let stage_seed = derive_seed(seed, &[si as u64]);
        let draws = match &cfg.method {
            Method::Beta { alpha, beta } => {
                if !(*alpha > 0.0 && *beta > 0.0) {
                    return Err(CliError::Input("method: Beta prior parameters must be positive".into()));
                }
                beta_draws(stage, *alpha, *beta, cfg.draws, stage_seed)?
            }
            Method::Regression { design, dispersion, icar, priors, hmc, cv_folds } => {
                let strata = strata
                    .as_ref()
                    .ok_or_else(|| CliError::Input("the regression method needs --strata for covariates".into()))?;
                let by_id: BTreeMap<&str, _> = strata.iter().map(|s| (s.id.as_str(), s.clone())).collect();
                let rows = stage
                    .ids()
                    .iter()
                    .map(|id| by_id.get(id.as_str()).cloned().ok_or_else(|| CliError::Input(format!("stratum `{id}` missing from --strata"))))
                    .collect::<CliResult<Vec<_>>>()?;
                let d = Design::from_strata(&rows, *design, *icar).map_err(CliError::input)?;
                let model = BetaBinomialModel { design: d, dispersion: *dispersion, priors: *priors };
                let hmc = HmcConfig { seed: stage_seed, ..hmc.clone() };
                let fit = fit_betabinomial(&model, stage, &hmc).map_err(CliError::runtime)?;
                for c in &fit.separated {
                    run.warn("separation", format!("stage {}: coefficient {c} drifts beyond |20| (quasi-separation)", stage.stage));
                }
                let mut worst: Option<(String, f64)> = None;
                for id in fit.ids() {
                    let chains = fit.draws.param_chains(&format!("xi[{id}]")).map_err(CliError::runtime)?;
                    if let (Some(r), _) = rhat_ess(&chains).map_err(CliError::runtime)? {
                        if r > worst.as_ref().map_or(f64::NEG_INFINITY, |w| w.1) {
                            worst = Some((id.clone(), r));
                        }
                    }
                }
                if let Some((id, r)) = worst.filter(|w| w.1 > 1.05) {
                    run.warn("rhat", format!("stage {}: R-hat {r:.3} for xi[{id}] exceeds 1.05", stage.stage));
                }
                let div = fit.draws.total_divergences();
                if div > 0 {
                    run.warn("divergences", format!("stage {}: {div} divergent transitions", stage.stage));
                }
                if *cv_folds > 0 {
                    let report = crossvalidate(&model, stage, *cv_folds, &hmc, stage_seed).map_err(CliError::runtime)?;
                    cv_rows.push((stage.stage, report));
                }
                fit.xi_draws().map_err(CliError::runtime)?
            }
        };
        per_stage.insert(stage.stage, draws);
    }

    let (src, rec) = cascade.evaluate(&per_stage, cfg.draws, derive_seed(seed, &[1 << 20])).map_err(|e| match e {
        odflow::cascade::CascadeError::Config(m) => CliError::Input(format!("cascade: {m}")),
        other => CliError::runtime(other),
    })?;
    run.write("xi_source.csv", |w| write_xi_draws(w, &src).map_err(CliError::runtime))?;
    run.write("xi_recipient.csv", |w| write_xi_draws(w, &rec).map_err(CliError::runtime))?;
    run.write("cv.csv", |w| {
        let mut c = csv_writer(w);
        c.write_record(["stage", "fold", "n_strata", "coverage", "mae", "elpd"]).map_err(CliError::runtime)?;
        for (stage, r) in &cv_rows {
            for f in &r.folds {
                c.write_record([
                    stage.to_string(),
                    f.fold.to_string(),
                    f.n_strata.to_string(),
                    f.coverage.to_string(),
                    f.mae.to_string(),
                    f.elpd.to_string(),
                ])
                .map_err(CliError::runtime)?;
            }
            let n: usize = r.folds.iter().map(|f| f.n_strata).sum();
            c.write_record([stage.to_string(), "all".into(), n.to_string(), r.coverage.to_string(), r.mae.to_string(), r.elpd.to_string()])
                .map_err(CliError::runtime)?;
        }
        c.flush().map_err(CliError::runtime)
    })?;
    run.finish()
}
