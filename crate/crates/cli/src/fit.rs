//! `odflow fit`: posterior draws of the flow model from thinned counts.

use std::path::Path;

use clap::ValueEnum;
use odflow::cascade::{read_xi_draws, XiDraws};
use odflow::inference::{
    diagnostics, gibbs_fit, hmc_fit, summarize, FlowModelConfig, FlowSurfaceModel, Functional, GammaFlowModel,
    GammaPrior, GibbsConfig, HmcConfig, PosteriorDraws, QuantileRow, SamplingSpec, XiPlugin,
};
use odflow::strata::io::{read_counts, read_scores};
use odflow::strata::{counts_from_scores, FlowCounts};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::run::{Run, DEFAULT_SEED};
use crate::tables::{csv_writer, fmt_opt, read_space};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitModel {
    /// Independent Gamma intensities, Gibbs sampler.
    Gamma,
    /// Smooth age surfaces, Hamiltonian Monte Carlo.
    Hsgp,
}

fn default_rhat() -> f64 {
    1.05
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitConfig {
    seed: Option<u64>,
    #[serde(default)]
    prior: GammaPrior,
    #[serde(default)]
    gibbs: GibbsConfig,
    #[serde(default)]
    model: FlowModelConfig,
    #[serde(default)]
    hmc: HmcConfig,
    #[serde(default)]
    plugin: XiPlugin,
    /// Inline alternative to the ξ draw files.
    #[serde(default)]
    sampling: Option<SamplingSpec>,
    #[serde(default = "default_rhat")]
    rhat_threshold: f64,
}

/// Where the observed counts come from.
pub enum CountsSource<'a> {
    Table(&'a Path),
    Scores { individuals: &'a Path, scores: &'a Path, zeta: f64 },
}

pub struct FitArgs<'a> {
    pub model: FitModel,
    pub counts: CountsSource<'a>,
    pub strata: &'a Path,
    pub xi_source: Option<&'a Path>,
    pub xi_recipient: Option<&'a Path>,
    pub config: Option<&'a Path>,
    pub seed: Option<u64>,
    pub out: &'a Path,
}

#[derive(Debug, Serialize)]
struct FitSummary {
    model: &'static str,
    chains: usize,
    iterations: usize,
    divergences: usize,
    accept_rate: Vec<f64>,
    step_size: Vec<f64>,
    max_rhat_flow: Option<f64>,
    min_ess_flow: Option<f64>,
    flows: Vec<QuantileRow>,
}

fn read_xi(run: &mut Run, path: &Path) -> CliResult<XiDraws> {
    let bytes = run.read_input(path)?;
    read_xi_draws(bytes.as_slice()).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn cmd_fit(args: FitArgs<'_>) -> CliResult<()> {
    let name = match args.model {
        FitModel::Gamma => "gamma",
        FitModel::Hsgp => "hsgp",
    };
    let mut run = Run::new(format!("fit {name}"), args.out)?;
    let cfg: FitConfig = run.read_config(args.config)?;
    let seed = args.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    run.set_seed(seed);
    let space = read_space(&mut run, args.strata)?;
    let counts: FlowCounts = match args.counts {
        CountsSource::Table(p) => {
            let bytes = run.read_input(p)?;
            read_counts(bytes.as_slice(), space.clone()).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
        }
        CountsSource::Scores { individuals, scores, zeta } => {
            let (ib, sb) = (run.read_input(individuals)?, run.read_input(scores)?);
            let m = read_scores(ib.as_slice(), sb.as_slice()).map_err(CliError::input)?;
            counts_from_scores(&m, space.clone(), zeta).map_err(CliError::input)?
        }
    };
    let ids: Vec<String> = space.ids().map(str::to_owned).collect();
    let sampling = match (args.xi_source, args.xi_recipient, cfg.sampling) {
        (Some(s), r, None) => {
            let src = read_xi(&mut run, s)?;
            let rec = match r {
                Some(r) => read_xi(&mut run, r)?,
                None => src.clone(),
            };
            XiDraws::sampling_spec(&src, &rec, &ids).map_err(CliError::input)?
        }
        (None, None, Some(spec)) => spec,
        (None, Some(_), _) => return Err(CliError::Input("--xi-recipient needs --xi-source".into())),
        (Some(_), _, Some(_)) => return Err(CliError::Input("give sampling either inline or as draw files, not both".into())),
        (None, None, None) => return Err(CliError::Input("no sampling probabilities: pass --xi-source or set `sampling`".into())),
    };
    sampling.validate(Some(space.len())).map_err(CliError::input)?;

    let draws: PosteriorDraws = match args.model {
        FitModel::Gamma => {
            let model = GammaFlowModel::new(counts, sampling, cfg.prior).map_err(CliError::input)?;
            gibbs_fit(&model, &GibbsConfig { seed, ..cfg.gibbs }).map_err(CliError::runtime)?
        }
        FitModel::Hsgp => {
            let model = FlowSurfaceModel::new(counts, &cfg.model).map_err(CliError::input)?;
            hmc_fit(&model, &sampling, cfg.plugin, &HmcConfig { seed, ..cfg.hmc }).map_err(CliError::runtime)?
        }
    };

    let diag = diagnostics(&draws).map_err(CliError::runtime)?;
    let flow = |n: &str| n.starts_with("pi[");
    let max_rhat = diag.iter().filter(|d| flow(&d.name)).filter_map(|d| d.rhat).fold(None, |m: Option<f64>, r| Some(m.map_or(r, |m| m.max(r))));
    let min_ess = diag.iter().filter(|d| flow(&d.name)).filter_map(|d| d.ess_bulk).fold(None, |m: Option<f64>, e| Some(m.map_or(e, |m| m.min(e))));
    let bad: Vec<&str> = diag
        .iter()
        .filter(|d| flow(&d.name) && d.rhat.is_some_and(|r| r > cfg.rhat_threshold))
        .map(|d| d.name.as_str())
        .collect();
    if !bad.is_empty() {
        let shown: Vec<&str> = bad.iter().take(5).copied().collect();
        run.warn(
            "rhat",
            format!(
                "{} flow parameters have R-hat above {} (max {:.3}), e.g. {}; run longer chains before relying on the fit",
                bad.len(),
                cfg.rhat_threshold,
                max_rhat.unwrap_or(f64::NAN),
                shown.join(", ")
            ),
        );
    }
    let divergences = draws.total_divergences();
    if divergences > 0 {
        run.warn("divergences", format!("{divergences} divergent transitions after warmup"));
    }

    run.write("draws.csv", |w| draws.write_csv(w).map_err(CliError::runtime))?;
    run.write("diagnostics.csv", |w| {
        let mut c = csv_writer(w);
        c.write_record(["parameter", "rhat", "ess_bulk"]).map_err(CliError::runtime)?;
        for d in &diag {
            c.write_record([d.name.clone(), fmt_opt(d.rhat), fmt_opt(d.ess_bulk)]).map_err(CliError::runtime)?;
        }
        c.flush().map_err(CliError::runtime)
    })?;
    let flows = summarize(&draws, &space, Functional::Flows, None).map_err(CliError::runtime)?;
    let summary = FitSummary {
        model: name,
        chains: draws.n_chains(),
        iterations: draws.n_iterations(),
        divergences,
        accept_rate: draws.stats().iter().map(|s| s.accept_rate).collect(),
        step_size: draws.stats().iter().map(|s| s.step_size).collect(),
        max_rhat_flow: max_rhat,
        min_ess_flow: min_ess,
        flows,
    };
    run.write_json("summary.json", &summary)?;
    run.finish()
}

