use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_probabilities, SimError, SimOutput};
use crate::hsgp::{exact_gram, SeKernelParams};
use crate::rng::{task_rng, TaskRng};
use crate::strata::{FlowCounts, FlowProportions, Gender, StrataSpace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpSurfaceParams {
    pub sigma: f64,
    pub lengthscale: [f64; 2],
    /// Log-intensity intercept per `"{source location}->{recipient location}"`.
    pub intercepts: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpSimParams {
    pub mf: GpSurfaceParams,
    pub fm: GpSurfaceParams,
    pub ages: [u32; 2],
    pub locations: Vec<String>,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

fn default_jitter() -> f64 {
    1e-8
}

fn intercepts(hh: f64, hl: f64, lh: f64, ll: f64) -> BTreeMap<String, f64> {
    [("h->h", hh), ("h->l", hl), ("l->h", lh), ("l->l", ll)].into_iter().map(|(k, v)| (k.to_owned(), v)).collect()
}

impl GpSimParams {
    /// Ages 15-24 in a high (`h`) and low (`l`) location with the reference
    /// surfaces.
    pub fn reference() -> Self {
        Self {
            mf: GpSurfaceParams { sigma: 1.5, lengthscale: [2.3, 4.6], intercepts: intercepts(-0.5, -9.0, -9.0, -1.0) },
            fm: GpSurfaceParams { sigma: 1.8, lengthscale: [4.1, 2.3], intercepts: intercepts(-1.0, -10.0, -9.0, -2.5) },
            ages: [15, 24],
            locations: vec!["h".into(), "l".into()],
            jitter: default_jitter(),
        }
    }

    pub fn space(&self) -> Result<StrataSpace, SimError> {
        let locs: Vec<&str> = self.locations.iter().map(String::as_str).collect();
        Ok(StrataSpace::age_location_grid(self.ages[0]..=self.ages[1], &locs)?)
    }
}

/// One draw from the exact GP on `inputs`, escalating the diagonal jitter
/// tenfold up to three times if the Gram matrix is not factorizable.
/// The jitter is relative to the marginal variance so that a vanishing
/// amplitude gives a vanishing surface.
pub fn draw_gp_surface(inputs: &[[f64; 2]], theta: &SeKernelParams, jitter: f64, rng: &mut TaskRng) -> Result<Vec<f64>, SimError> {
    let l = gp_factor(inputs, theta, jitter)?;
    let eps: DVector<f64> = DVector::from_fn(inputs.len(), |_, _| rng.sample(StandardNormal));
    Ok((l * eps).as_slice().to_vec())
}

fn gp_factor(inputs: &[[f64; 2]], theta: &SeKernelParams, jitter: f64) -> Result<DMatrix<f64>, SimError> {
    let n = inputs.len();
    let k = DMatrix::from_row_slice(n, n, &exact_gram(inputs, theta));
    const ESCALATIONS: usize = 3;
    let mut j = jitter * theta.sigma2;
    for _ in 0..=ESCALATIONS {
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += j;
        }
        if let Some(c) = kj.cholesky() {
            return Ok(c.l());
        }
        j *= 10.0;
    }
    Err(SimError::GramNotFactorizable { attempts: ESCALATIONS })
}

/// Draws both surfaces, composes log intensities with the block intercepts
/// and thins Poisson transmission counts.
pub fn simulate_gp_flows(params: &GpSimParams, xi_source: &[f64], xi_recipient: &[f64], seed: u64) -> Result<SimOutput, SimError> {
    let space = std::sync::Arc::new(params.space()?);
    check_probabilities(xi_source, space.len(), "xi_source")?;
    check_probabilities(xi_recipient, space.len(), "xi_recipient")?;
    let mut rng = task_rng(seed, &[0]);
    let ages: Vec<f64> = (params.ages[0]..=params.ages[1]).map(f64::from).collect();
    let inputs: Vec<[f64; 2]> = ages.iter().flat_map(|&s| ages.iter().map(move |&r| [s, r])).collect();
    let mut surfaces = Vec::new();
    for p in [&params.mf, &params.fm] {
        let theta = SeKernelParams::from_sd(p.sigma, p.lengthscale[0], p.lengthscale[1])
            .map_err(|e| SimError::Invalid(e.to_string()))?;
        surfaces.push(draw_gp_surface(&inputs, &theta, params.jitter, &mut rng)?);
    }
    let n_ages = ages.len();
    let mut lambda = Vec::with_capacity(space.n_pairs());
    for pair in space.pairs() {
        let (s, r) = (space.stratum(pair.source), space.stratum(pair.recipient));
        let (which, p) = match (s.gender, r.gender) {
            (Gender::M, Gender::F) => (0, &params.mf),
            (Gender::F, Gender::M) => (1, &params.fm),
            _ => return Err(SimError::Invalid("same-gender pair in flow grid".into())),
        };
        let key = format!("{}->{}", s.location.as_deref().unwrap_or(""), r.location.as_deref().unwrap_or(""));
        let mu = *p.intercepts.get(&key).ok_or_else(|| SimError::Invalid(format!("no intercept for block {key}")))?;
        let (sa, ra) = (s.age.expect("grid ages").lo - params.ages[0], r.age.expect("grid ages").lo - params.ages[0]);
        lambda.push((mu + surfaces[which][sa as usize * n_ages + ra as usize]).exp());
    }
    let z: Vec<u64> = lambda.iter().map(|&l| if l > 0.0 { Poisson::new(l).expect("positive").sample(&mut rng) as u64 } else { 0 }).collect();
    let n: Vec<u64> = space
        .pairs()
        .iter()
        .zip(&z)
        .map(|(p, &zk)| Binomial::new(zk, xi_source[p.source] * xi_recipient[p.recipient]).expect("valid").sample(&mut rng))
        .collect();
    let pi = FlowProportions::from_weights(space.clone(), lambda.clone())?;
    Ok(SimOutput {
        observed: Some(FlowCounts::new(space.clone(), n)?),
        z: z.iter().map(|&v| v as f64).collect(),
        pi,
        intensity: Some(lambda),
        space,
        trajectory: Vec::new(),
        events: Vec::new(),
    })
}
