use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::stage::Stage;
use super::CascadeError;
use crate::inference::{InferenceError, SamplingSpec, XiPrior};
use crate::rng::task_rng;

/// Monte Carlo draws of one probability per stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct XiDraws {
    ids: Vec<String>,
    draws: Vec<Vec<f64>>,
}

impl XiDraws {
    pub fn new(ids: Vec<String>, draws: Vec<Vec<f64>>) -> Result<Self, CascadeError> {
        if ids.len() != draws.len() || ids.is_empty() {
            return Err(CascadeError::MisalignedStrata("one draw vector per stratum required".into()));
        }
        let n = draws[0].len();
        if n == 0 || draws.iter().any(|d| d.len() != n) {
            return Err(CascadeError::MisalignedStrata("strata carry different numbers of draws".into()));
        }
        if let Some((i, _)) = draws.iter().enumerate().find(|(_, d)| d.iter().any(|v| !(*v > 0.0 && *v <= 1.0))) {
            return Err(CascadeError::Config(format!("draw for `{}` outside (0,1]", ids[i])));
        }
        Ok(Self { ids, draws })
    }

    /// Point masses.
    pub fn constant(ids: Vec<String>, values: &[f64]) -> Result<Self, CascadeError> {
        Self::new(ids, values.iter().map(|&v| vec![v]).collect())
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn n_draws(&self) -> usize {
        self.draws[0].len()
    }

    pub fn stratum(&self, i: usize) -> &[f64] {
        &self.draws[i]
    }

    pub fn means(&self) -> Vec<f64> {
        self.draws.iter().map(|d| crate::stats::mean(d)).collect()
    }

    /// Reorders to `ids`.
    pub fn aligned(&self, ids: &[String]) -> Result<Self, CascadeError> {
        let pos: BTreeMap<&str, usize> = self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let draws = ids
            .iter()
            .map(|id| pos.get(id.as_str()).map(|&i| self.draws[i].clone()))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| CascadeError::MisalignedStrata("stage strata differ".into()))?;
        if ids.len() != self.ids.len() {
            return Err(CascadeError::MisalignedStrata("stage strata differ".into()));
        }
        Self::new(ids.to_vec(), draws)
    }

    pub fn to_priors(&self) -> Vec<XiPrior> {
        self.draws
            .iter()
            .map(|d| if d.len() == 1 { XiPrior::fixed(d[0]) } else { XiPrior::Draws { values: d.clone() } })
            .collect()
    }
}

/// Elementwise product of stage draws. Stages with a different number of
/// draws than `n_draws` are resampled with replacement.
pub fn cascade_product(stages: &[&XiDraws], n_draws: usize, seed: u64) -> Result<XiDraws, CascadeError> {
    let first = stages.first().ok_or_else(|| CascadeError::Config("no stages to multiply".into()))?;
    let ids = first.ids().to_vec();
    let mut out = vec![vec![1.0; n_draws]; ids.len()];
    for (s, stage) in stages.iter().enumerate() {
        let stage = stage.aligned(&ids)?;
        let mut rng = task_rng(seed, &[s as u64]);
        let m = stage.n_draws();
        for (i, row) in out.iter_mut().enumerate() {
            let d = stage.stratum(i);
            for (j, v) in row.iter_mut().enumerate() {
                let k = if m == n_draws { j } else { rng.random_range(0..m) };
                *v *= d[k];
            }
        }
    }
    XiDraws::new(ids, out)
}

/// Which stages multiply into the source and recipient probabilities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CascadeSpec {
    pub source: Vec<Stage>,
    pub recipient: Vec<Stage>,
}

impl Default for CascadeSpec {
    fn default() -> Self {
        Self {
            source: vec![Stage::Participation, Stage::SequencingSource],
            recipient: vec![Stage::Participation, Stage::SequencingRecipient],
        }
    }
}

impl CascadeSpec {
    /// Source and recipient draws from per-stage draws.
    pub fn evaluate(
        &self,
        stages: &BTreeMap<Stage, XiDraws>,
        n_draws: usize,
        seed: u64,
    ) -> Result<(XiDraws, XiDraws), CascadeError> {
        let pick = |list: &[Stage]| -> Result<Vec<&XiDraws>, CascadeError> {
            list.iter()
                .map(|s| stages.get(s).ok_or_else(|| CascadeError::Config(format!("no draws for stage {s}"))))
                .collect()
        };
        let src = cascade_product(&pick(&self.source)?, n_draws, seed)?;
        let rec = cascade_product(&pick(&self.recipient)?, n_draws, seed.wrapping_add(1))?;
        Ok((src, rec))
    }
}

impl XiDraws {
    /// Sampling distributions for the flow models, ordered like `ids`.
    pub fn sampling_spec(source: &XiDraws, recipient: &XiDraws, ids: &[String]) -> Result<SamplingSpec, CascadeError> {
        let (s, r) = (source.aligned(ids)?, recipient.aligned(ids)?);
        if s == r {
            return Ok(SamplingSpec::shared(s.to_priors())?);
        }
        SamplingSpec::split(s.to_priors(), r.to_priors()).map_err(|e: InferenceError| e.into())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DrawRow {
    stratum: String,
    draw_index: usize,
    value: f64,
}

pub fn write_xi_draws(writer: impl Write, xi: &XiDraws) -> Result<(), CascadeError> {
    let mut w = csv::Writer::from_writer(writer);
    for (id, d) in xi.ids.iter().zip(&xi.draws) {
        for (j, &value) in d.iter().enumerate() {
            w.serialize(DrawRow { stratum: id.clone(), draw_index: j, value }).map_err(|e| CascadeError::Io(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| CascadeError::Io(e.to_string()))
}

pub fn read_xi_draws(reader: impl Read) -> Result<XiDraws, CascadeError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut ids: Vec<String> = Vec::new();
    let mut draws: Vec<Vec<(usize, f64)>> = Vec::new();
    for row in rdr.deserialize::<DrawRow>() {
        let row = row.map_err(|e| CascadeError::Io(e.to_string()))?;
        let i = match ids.iter().position(|id| *id == row.stratum) {
            Some(i) => i,
            None => {
                ids.push(row.stratum);
                draws.push(Vec::new());
                ids.len() - 1
            }
        };
        draws[i].push((row.draw_index, row.value));
    }
    let draws = draws
        .into_iter()
        .map(|mut d| {
            d.sort_by_key(|x| x.0);
            d.into_iter().map(|x| x.1).collect()
        })
        .collect();
    XiDraws::new(ids, draws)
}
