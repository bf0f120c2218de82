use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::CascadeError;
use crate::rng::TaskRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Participation,
    SequencingSource,
    SequencingRecipient,
}

impl Stage {
    pub fn label(self) -> &'static str {
        match self {
            Stage::Participation => "participation",
            Stage::SequencingSource => "sequencing-source",
            Stage::SequencingRecipient => "sequencing-recipient",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Stage {
    type Err = CascadeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "participation" => Ok(Stage::Participation),
            "sequencing-source" => Ok(Stage::SequencingSource),
            "sequencing-recipient" => Ok(Stage::SequencingRecipient),
            other => Err(CascadeError::Io(format!("unknown stage `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Source,
    Recipient,
    #[default]
    Both,
}

impl FromStr for Role {
    type Err = CascadeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "source" => Ok(Role::Source),
            "recipient" => Ok(Role::Recipient),
            "" | "both" => Ok(Role::Both),
            other => Err(CascadeError::Io(format!("unknown role `{other}`"))),
        }
    }
}

/// Trials and successes per stratum at one step of the cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct StageCounts {
    pub stage: Stage,
    pub role: Role,
    ids: Vec<String>,
    trials: Vec<u64>,
    successes: Vec<u64>,
}

impl StageCounts {
    pub fn new(stage: Stage, role: Role, ids: Vec<String>, trials: Vec<u64>, successes: Vec<u64>) -> Result<Self, CascadeError> {
        if ids.len() != trials.len() || ids.len() != successes.len() {
            return Err(CascadeError::MisalignedStrata("ids, trials and successes differ in length".into()));
        }
        if ids.is_empty() {
            return Err(CascadeError::MisalignedStrata("no strata".into()));
        }
        for ((id, &n), &k) in ids.iter().zip(&trials).zip(&successes) {
            if k > n {
                return Err(CascadeError::InvalidCounts { stratum: id.clone(), trials: n, successes: k });
            }
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(d) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(CascadeError::MisalignedStrata(format!("duplicate stratum `{d}`")));
        }
        Ok(Self { stage, role, ids, trials, successes })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn trials(&self) -> &[u64] {
        &self.trials
    }

    pub fn successes(&self) -> &[u64] {
        &self.successes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaParams {
    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn sample(&self, rng: &mut TaskRng) -> f64 {
        // a draw of exactly 0 would not be a usable probability
        Beta::new(self.alpha, self.beta).expect("positive shapes").sample(rng).max(f64::MIN_POSITIVE)
    }
}

/// Conjugate Beta posterior per stratum under a Beta(`alpha`, `beta`) prior.
pub fn beta_posterior(stage: &StageCounts, alpha: f64, beta: f64) -> Vec<BetaParams> {
    stage
        .trials
        .iter()
        .zip(&stage.successes)
        .map(|(&n, &k)| BetaParams { alpha: k as f64 + alpha, beta: (n - k) as f64 + beta })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct StageRow {
    stratum_id: String,
    trials: u64,
    successes: u64,
    stage: String,
    #[serde(default)]
    role: String,
}

/// Reads every stage present in a counts CSV, in order of first appearance.
pub fn read_stage_counts(reader: impl Read) -> Result<Vec<StageCounts>, CascadeError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut groups: Vec<(Stage, Role, Vec<String>, Vec<u64>, Vec<u64>)> = Vec::new();
    for row in rdr.deserialize::<StageRow>() {
        let row = row.map_err(|e| CascadeError::Io(e.to_string()))?;
        let (stage, role) = (row.stage.parse::<Stage>()?, row.role.parse::<Role>()?);
        let g = match groups.iter().position(|g| g.0 == stage && g.1 == role) {
            Some(i) => &mut groups[i],
            None => {
                groups.push((stage, role, vec![], vec![], vec![]));
                groups.last_mut().expect("just pushed")
            }
        };
        g.2.push(row.stratum_id);
        g.3.push(row.trials);
        g.4.push(row.successes);
    }
    groups.into_iter().map(|(s, r, ids, n, k)| StageCounts::new(s, r, ids, n, k)).collect()
}

pub fn write_stage_counts(writer: impl Write, stages: &[StageCounts]) -> Result<(), CascadeError> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| CascadeError::Io(e.to_string());
    for s in stages {
        let role = match s.role {
            Role::Source => "source",
            Role::Recipient => "recipient",
            Role::Both => "both",
        };
        for i in 0..s.len() {
            w.serialize(StageRow {
                stratum_id: s.ids[i].clone(),
                trials: s.trials[i],
                successes: s.successes[i],
                stage: s.stage.to_string(),
                role: role.into(),
            })
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| CascadeError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let s = StageCounts::new(Stage::SequencingSource, Role::Source, vec!["a".into(), "b".into()], vec![10, 0], vec![3, 0])
            .unwrap();
        let mut buf = Vec::new();
        write_stage_counts(&mut buf, std::slice::from_ref(&s)).unwrap();
        let back = read_stage_counts(buf.as_slice()).unwrap();
        assert_eq!(back, vec![s]);
        assert!(StageCounts::new(Stage::Participation, Role::Both, vec!["a".into()], vec![1], vec![2]).is_err());
    }
}
