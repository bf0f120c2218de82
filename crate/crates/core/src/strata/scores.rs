use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use super::flows::FlowCounts;
use super::space::StrataSpace;
use super::StrataError;

/// Default phylogenetic support threshold.
pub const DEFAULT_ZETA: f64 = 0.6;

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub id: String,
    pub stratum: String,
    pub sampled: bool,
}

/// Sparse directed source-recipient scores between sampled individuals.
#[derive(Debug, Clone, Default)]
pub struct ScoreMatrix {
    individuals: Vec<Individual>,
    index: HashMap<String, usize>,
    w: BTreeMap<(usize, usize), f64>,
}

impl ScoreMatrix {
    pub fn new(individuals: Vec<Individual>) -> Result<Self, StrataError> {
        let mut index = HashMap::with_capacity(individuals.len());
        for (i, ind) in individuals.iter().enumerate() {
            if index.insert(ind.id.clone(), i).is_some() {
                return Err(StrataError::InvalidScore(format!("duplicate individual `{}`", ind.id)));
            }
        }
        Ok(Self { individuals, index, w: BTreeMap::new() })
    }

    pub fn insert(&mut self, source: &str, recipient: &str, score: f64) -> Result<(), StrataError> {
        let lookup = |id: &str| {
            self.index.get(id).copied().ok_or_else(|| StrataError::InvalidScore(format!("unknown individual `{id}`")))
        };
        let (i, j) = (lookup(source)?, lookup(recipient)?);
        if i == j {
            return Err(StrataError::InvalidScore(format!("self score for `{source}`")));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(StrataError::InvalidScore(format!("score {score} for {source}->{recipient} outside [0,1]")));
        }
        for k in [i, j] {
            if !self.individuals[k].sampled {
                return Err(StrataError::InvalidScore(format!(
                    "score involves unsampled individual `{}`",
                    self.individuals[k].id
                )));
            }
        }
        self.w.insert((i, j), score);
        Ok(())
    }

    pub fn individuals(&self) -> &[Individual] {
        &self.individuals
    }

    pub fn get(&self, source: &str, recipient: &str) -> Option<f64> {
        let i = *self.index.get(source)?;
        let j = *self.index.get(recipient)?;
        self.w.get(&(i, j)).copied()
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Individual, &Individual, f64)> {
        self.w.iter().map(|(&(i, j), &w)| (&self.individuals[i], &self.individuals[j], w))
    }
}

/// Counts pairs of sampled individuals whose score exceeds `zeta`.
///
/// Scores at or below the threshold are ignored, also on masked pairs.
pub fn counts_from_scores(scores: &ScoreMatrix, space: Arc<StrataSpace>, zeta: f64) -> Result<FlowCounts, StrataError> {
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(StrataError::InvalidThreshold(zeta));
    }
    let strata = scores
        .individuals()
        .iter()
        .map(|ind| space.index_of(&ind.stratum))
        .collect::<Result<Vec<_>, _>>()?;
    let mut n = vec![0u64; space.n_pairs()];
    let mut offenders = Vec::new();
    for (&(i, j), &w) in &scores.w {
        if w <= zeta {
            continue;
        }
        match space.pair_index(strata[i], strata[j]) {
            Some(k) => n[k] += 1,
            None => offenders.push(format!("{}->{}", scores.individuals[i].id, scores.individuals[j].id)),
        }
    }
    if !offenders.is_empty() {
        return Err(StrataError::MaskedPairs(offenders.join(", ")));
    }
    FlowCounts::new(space, n)
}
