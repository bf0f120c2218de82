//! `odflow simulate`: ground-truth flows, thinned observations and census
//! stage counts from a scenario file.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use clap::ValueEnum;
use odflow::cascade::{write_stage_counts, Role, Stage, StageCounts};
use odflow::rng::{derive_seed, task_rng};
use odflow::sim::{
    simulate_gp_flows, simulate_multinomial, simulate_sit_gillespie, simulate_sit_ode, thin_observations,
    GillespieOptions, GpSimParams, SimOutput, SitModel, ThinInput, ThinningMode, TimeSpan, Tolerance,
};
use odflow::strata::io::{write_counts, write_strata};
use odflow::strata::{AgeBand, FlowCounts, FlowProportions, Gender, StrataSpace, Stratum};
use rand_distr::{Binomial, Distribution};
use serde::Deserialize;

use crate::error::{CliError, CliResult};
use crate::run::{Run, DEFAULT_SEED};
use crate::tables::{csv_writer, fmt_opt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Simulator {
    Ode,
    Gillespie,
    Multinomial,
    Gp,
}

impl Simulator {
    fn name(self) -> &'static str {
        match self {
            Simulator::Ode => "ode",
            Simulator::Gillespie => "gillespie",
            Simulator::Multinomial => "multinomial",
            Simulator::Gp => "gp",
        }
    }
}

/// A probability for every stratum, or a map keyed by stratum id or location.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum XiValues {
    Constant(f64),
    Map(BTreeMap<String, f64>),
}

impl XiValues {
    fn resolve(&self, space: &StrataSpace, field: &str) -> CliResult<Vec<f64>> {
        let values = space
            .strata()
            .iter()
            .map(|s| match self {
                XiValues::Constant(v) => Ok(*v),
                XiValues::Map(m) => m
                    .get(&s.id)
                    .or_else(|| s.location.as_ref().and_then(|l| m.get(l)))
                    .copied()
                    .ok_or_else(|| CliError::Input(format!("sampling.{field}: no probability for stratum `{}`", s.id))),
            })
            .collect::<CliResult<Vec<f64>>>()?;
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
            return Err(CliError::Input(format!("sampling.{field}: probability {v} outside (0,1]")));
        }
        Ok(values)
    }
}

fn default_census() -> u64 {
    200
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingBlock {
    pub xi_source: XiValues,
    /// Omitted when one probability applies to both roles.
    #[serde(default)]
    pub xi_recipient: Option<XiValues>,
    /// Individuals enumerated per stratum in the simulated census.
    #[serde(default = "default_census")]
    pub census: u64,
    #[serde(default)]
    pub thinning: ThinningMode,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct TolBlock {
    rtol: f64,
    atol: f64,
}

impl Default for TolBlock {
    fn default() -> Self {
        let t = Tolerance::default();
        Self { rtol: t.rtol, atol: t.atol }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SitScenario {
    seed: Option<u64>,
    model: SitModel,
    span: TimeSpan,
    #[serde(default)]
    tolerance: TolBlock,
    #[serde(default)]
    gillespie: GillespieOptions,
    sampling: SamplingBlock,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StratumEntry {
    id: String,
    #[serde(default)]
    gender: String,
    #[serde(default)]
    age: Option<String>,
    #[serde(default)]
    location: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightEntry {
    source: String,
    recipient: String,
    weight: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MultinomialScenario {
    seed: Option<u64>,
    strata: Vec<StratumEntry>,
    /// Unnormalized true flows; unlisted pairs get zero.
    weights: Vec<WeightEntry>,
    /// Expected number of observed transmissions.
    target_n: f64,
    sampling: SamplingBlock,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GpScenario {
    seed: Option<u64>,
    params: GpSimParams,
    sampling: SamplingBlock,
}

struct Simulated {
    output: SimOutput,
    observed: FlowCounts,
    xi_source: Vec<f64>,
    xi_recipient: Vec<f64>,
    shared: bool,
    census: u64,
}

fn resolve_sampling(block: &SamplingBlock, space: &StrataSpace) -> CliResult<(Vec<f64>, Vec<f64>, bool)> {
    let src = block.xi_source.resolve(space, "xi_source")?;
    match &block.xi_recipient {
        None => Ok((src.clone(), src, true)),
        Some(r) => {
            let rec = r.resolve(space, "xi_recipient")?;
            let shared = rec == src;
            Ok((src, rec, shared))
        }
    }
}

fn sit(kind: Simulator, sc: SitScenario, seed: u64) -> CliResult<Simulated> {
    let space = sc.model.space().map_err(CliError::input)?;
    let (xs, xr, shared) = resolve_sampling(&sc.sampling, &space)?;
    let output = match kind {
        Simulator::Ode => {
            let tol = Tolerance { rtol: sc.tolerance.rtol, atol: sc.tolerance.atol };
            simulate_sit_ode(&sc.model, sc.span, tol)
        }
        _ => simulate_sit_gillespie(&sc.model, sc.span, seed, sc.gillespie),
    }
    .map_err(CliError::runtime)?;
    let thin_seed = derive_seed(seed, &[1]);
    let counts = output.z_counts();
    let input = match (kind, sc.sampling.thinning) {
        (Simulator::Gillespie, ThinningMode::IndividualLevel) => ThinInput::Events(&output.events),
        _ => ThinInput::Counts(&counts),
    };
    let observed =
        thin_observations(input, &output.space, &xs, &xr, sc.sampling.thinning, thin_seed).map_err(CliError::runtime)?;
    Ok(Simulated { output, observed, xi_source: xs, xi_recipient: xr, shared, census: sc.sampling.census })
}

fn multinomial(sc: MultinomialScenario, seed: u64) -> CliResult<Simulated> {
    let strata = sc
        .strata
        .iter()
        .map(|s| {
            let gender: Gender = s.gender.parse().map_err(CliError::input)?;
            let age = s.age.as_deref().map(str::parse::<AgeBand>).transpose().map_err(CliError::input)?;
            Ok(Stratum::new(s.id.clone(), gender, age, s.location.as_deref()))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let space = Arc::new(StrataSpace::with_gender_mask(strata).map_err(CliError::input)?);
    let mut weights = vec![0.0; space.n_pairs()];
    for (i, w) in sc.weights.iter().enumerate() {
        let s = space.index_of(&w.source).map_err(|e| CliError::Input(format!("weights[{i}]: {e}")))?;
        let r = space.index_of(&w.recipient).map_err(|e| CliError::Input(format!("weights[{i}]: {e}")))?;
        let k = space
            .pair_index(s, r)
            .ok_or_else(|| CliError::Input(format!("weights[{i}]: pair {}->{} is structurally zero", w.source, w.recipient)))?;
        weights[k] = w.weight;
    }
    let pi0 = FlowProportions::from_weights(space.clone(), weights).map_err(CliError::input)?;
    if sc.sampling.xi_recipient.is_some() {
        return Err(CliError::Input("sampling.xi_recipient: the multinomial simulator uses one probability per stratum".into()));
    }
    let (xs, xr, shared) = resolve_sampling(&sc.sampling, &space)?;
    let mut output = simulate_multinomial(&pi0, &xs, sc.target_n, seed).map_err(CliError::runtime)?;
    let observed = output.observed.take().expect("simulator thins");
    Ok(Simulated { output, observed, xi_source: xs, xi_recipient: xr, shared, census: sc.sampling.census })
}

fn gp(sc: GpScenario, seed: u64) -> CliResult<Simulated> {
    let space = sc.params.space().map_err(CliError::input)?;
    let (xs, xr, shared) = resolve_sampling(&sc.sampling, &space)?;
    let mut output = simulate_gp_flows(&sc.params, &xs, &xr, seed).map_err(CliError::runtime)?;
    let observed = output.observed.take().expect("simulator thins");
    Ok(Simulated { output, observed, xi_source: xs, xi_recipient: xr, shared, census: sc.sampling.census })
}

/// Census of `census` individuals per stratum with Bernoulli inclusion.
fn census_stages(sim: &Simulated, seed: u64) -> CliResult<Vec<StageCounts>> {
    let space = &sim.output.space;
    let ids: Vec<String> = space.ids().map(str::to_owned).collect();
    let draw = |xi: &[f64], stream: u64| -> Vec<u64> {
        xi.iter()
            .enumerate()
            .map(|(i, &p)| {
                let mut rng = task_rng(seed, &[stream, i as u64]);
                Binomial::new(sim.census, p).expect("validated").sample(&mut rng)
            })
            .collect()
    };
    let trials = vec![sim.census; ids.len()];
    let stages = if sim.shared {
        vec![StageCounts::new(Stage::Participation, Role::Both, ids, trials, draw(&sim.xi_source, 0))]
    } else {
        vec![
            StageCounts::new(Stage::SequencingSource, Role::Source, ids.clone(), trials.clone(), draw(&sim.xi_source, 0)),
            StageCounts::new(Stage::SequencingRecipient, Role::Recipient, ids, trials, draw(&sim.xi_recipient, 1)),
        ]
    };
    stages.into_iter().collect::<Result<_, _>>().map_err(CliError::runtime)
}

pub fn cmd_simulate(kind: Simulator, scenario: &Path, seed: Option<u64>, out: &Path) -> CliResult<()> {
    let mut run = Run::new(format!("simulate {}", kind.name()), out)?;
    let pick = |own: Option<u64>| seed.or(own).unwrap_or(DEFAULT_SEED);
    let (sim, seed) = match kind {
        Simulator::Ode | Simulator::Gillespie => {
            let sc: SitScenario = run.read_config(Some(scenario))?;
            let s = pick(sc.seed);
            (sit(kind, sc, s)?, s)
        }
        Simulator::Multinomial => {
            let sc: MultinomialScenario = run.read_config(Some(scenario))?;
            let s = pick(sc.seed);
            (multinomial(sc, s)?, s)
        }
        Simulator::Gp => {
            let sc: GpScenario = run.read_config(Some(scenario))?;
            let s = pick(sc.seed);
            (gp(sc, s)?, s)
        }
    };
    run.set_seed(seed);
    let space = sim.output.space.clone();

    run.write("strata.csv", |w| write_strata(w, space.strata()).map_err(CliError::runtime))?;
    run.write("truth.csv", |w| {
        let mut c = csv_writer(w);
        c.write_record(["source_stratum", "recipient_stratum", "z", "pi", "intensity"]).map_err(CliError::runtime)?;
        for k in 0..space.n_pairs() {
            let p = space.pair(k);
            let intensity = sim.output.intensity.as_ref().map(|v| v[k]);
            c.write_record([
                space.stratum(p.source).id.as_str(),
                space.stratum(p.recipient).id.as_str(),
                &sim.output.z[k].to_string(),
                &sim.output.pi.values()[k].to_string(),
                &fmt_opt(intensity),
            ])
            .map_err(CliError::runtime)?;
        }
        c.flush().map_err(CliError::runtime)
    })?;
    run.write("counts.csv", |w| write_counts(w, &sim.observed).map_err(CliError::runtime))?;
    run.write("sampling.csv", |w| {
        let mut c = csv_writer(w);
        c.write_record(["stratum", "xi_source", "xi_recipient"]).map_err(CliError::runtime)?;
        for (i, id) in space.ids().enumerate() {
            c.write_record([id, &sim.xi_source[i].to_string(), &sim.xi_recipient[i].to_string()]).map_err(CliError::runtime)?;
        }
        c.flush().map_err(CliError::runtime)
    })?;
    let stages = census_stages(&sim, derive_seed(seed, &[2]))?;
    run.write("stages.csv", |w| write_stage_counts(w, &stages).map_err(CliError::runtime))?;
    if !sim.output.trajectory.is_empty() {
        run.write("prevalence.csv", |w| {
            let mut c = csv_writer(w);
            c.write_record(["t", "prevalence", "population"]).map_err(CliError::runtime)?;
            for p in &sim.output.trajectory {
                c.write_record([p.t.to_string(), p.prevalence().to_string(), p.population().to_string()])
                    .map_err(CliError::runtime)?;
            }
            c.flush().map_err(CliError::runtime)
        })?;
    }
    if sim.output.z.iter().sum::<f64>() == 0.0 {
        run.warn("no_transmissions", "no transmissions in the study window; pi is a uniform placeholder".into());
    }
    run.finish()
}
