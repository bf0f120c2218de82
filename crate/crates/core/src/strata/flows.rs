use std::collections::HashMap;
use std::ops::Add;
use std::sync::Arc;

use super::space::{AgeBand, Gender, Stratum, StrataSpace};
use super::StrataError;

/// Observed or true event counts over the non-masked pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowCounts {
    space: Arc<StrataSpace>,
    n: Vec<u64>,
}

impl FlowCounts {
    pub fn new(space: Arc<StrataSpace>, n: Vec<u64>) -> Result<Self, StrataError> {
        check_len(&space, n.len())?;
        Ok(Self { space, n })
    }

    pub fn zeros(space: Arc<StrataSpace>) -> Self {
        let l = space.n_pairs();
        Self { space, n: vec![0; l] }
    }

    /// Builds counts from `(source id, recipient id, count)` records, summing
    /// repeated pairs. Counts on masked pairs are collected and reported together.
    pub fn from_records<'a, I>(space: Arc<StrataSpace>, records: I) -> Result<Self, StrataError>
    where
        I: IntoIterator<Item = (&'a str, &'a str, u64)>,
    {
        let mut n = vec![0u64; space.n_pairs()];
        let mut masked = Vec::new();
        for (src, rec, count) in records {
            let (a, b) = (space.index_of(src)?, space.index_of(rec)?);
            match space.pair_index(a, b) {
                Some(k) => n[k] += count,
                None if count > 0 => masked.push(format!("{src}->{rec}")),
                None => {}
            }
        }
        if !masked.is_empty() {
            return Err(StrataError::MaskedPairs(masked.join(", ")));
        }
        Ok(Self { space, n })
    }

    pub fn space(&self) -> &Arc<StrataSpace> {
        &self.space
    }

    pub fn values(&self) -> &[u64] {
        &self.n
    }

    /// Count for `(source, recipient)`; zero on masked pairs.
    pub fn get(&self, source: usize, recipient: usize) -> u64 {
        self.space.pair_index(source, recipient).map_or(0, |k| self.n[k])
    }

    pub fn total(&self) -> u64 {
        self.n.iter().sum()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.n.iter().map(|&v| v as f64).collect()
    }
}

/// Non-negative transmission intensities over the non-masked pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowIntensities {
    space: Arc<StrataSpace>,
    lambda: Vec<f64>,
}

impl FlowIntensities {
    pub fn new(space: Arc<StrataSpace>, lambda: Vec<f64>) -> Result<Self, StrataError> {
        check_len(&space, lambda.len())?;
        check_nonnegative(&lambda)?;
        Ok(Self { space, lambda })
    }

    pub fn space(&self) -> &Arc<StrataSpace> {
        &self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.lambda
    }

    pub fn total(&self) -> f64 {
        self.lambda.iter().sum()
    }

    pub fn normalize(&self) -> Result<FlowProportions, StrataError> {
        FlowProportions::from_weights(self.space.clone(), self.lambda.clone())
    }
}

impl Add for &FlowIntensities {
    type Output = Result<FlowIntensities, StrataError>;

    fn add(self, rhs: &FlowIntensities) -> Self::Output {
        if self.space != rhs.space {
            return Err(StrataError::SpaceMismatch);
        }
        let lambda = self.lambda.iter().zip(&rhs.lambda).map(|(x, y)| x + y).collect();
        FlowIntensities::new(self.space.clone(), lambda)
    }
}

/// Flow proportions: a point on the simplex over the non-masked pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowProportions {
    space: Arc<StrataSpace>,
    pi: Vec<f64>,
}

pub(crate) fn simplex_tolerance(len: usize) -> f64 {
    1e-12_f64.max(4.0 * len as f64 * f64::EPSILON)
}

impl FlowProportions {
    pub fn new(space: Arc<StrataSpace>, pi: Vec<f64>) -> Result<Self, StrataError> {
        check_len(&space, pi.len())?;
        check_nonnegative(&pi)?;
        let sum: f64 = pi.iter().sum();
        if (sum - 1.0).abs() > simplex_tolerance(pi.len()) {
            return Err(StrataError::NotOnSimplex(sum));
        }
        Ok(Self { space, pi })
    }

    /// Normalizes non-negative weights onto the simplex.
    pub fn from_weights(space: Arc<StrataSpace>, weights: Vec<f64>) -> Result<Self, StrataError> {
        check_len(&space, weights.len())?;
        check_nonnegative(&weights)?;
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(StrataError::EstimatorUndefined("weights sum to zero".into()));
        }
        let pi = weights.iter().map(|w| w / sum).collect();
        Ok(Self { space, pi })
    }

    pub fn space(&self) -> &Arc<StrataSpace> {
        &self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.pi
    }

    /// Proportion for `(source, recipient)`; zero on masked pairs.
    pub fn get(&self, source: usize, recipient: usize) -> f64 {
        self.space.pair_index(source, recipient).map_or(0.0, |k| self.pi[k])
    }

    /// Dense `A x A` matrix, row = source, with zeros on masked pairs.
    pub fn to_matrix(&self) -> Vec<Vec<f64>> {
        dense(&self.space, &self.pi)
    }
}

pub(crate) fn dense(space: &StrataSpace, values: &[f64]) -> Vec<Vec<f64>> {
    let a = space.len();
    let mut m = vec![vec![0.0; a]; a];
    for (p, v) in space.pairs().iter().zip(values) {
        m[p.source][p.recipient] = *v;
    }
    m
}

fn check_len(space: &StrataSpace, got: usize) -> Result<(), StrataError> {
    if got != space.n_pairs() {
        return Err(StrataError::LengthMismatch { expected: space.n_pairs(), got });
    }
    Ok(())
}

fn check_nonnegative(values: &[f64]) -> Result<(), StrataError> {
    match values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        Some(k) => Err(StrataError::InvalidFlowValue(k)),
        None => Ok(()),
    }
}

/// Any of the three flow representations.
#[derive(Debug, Clone, PartialEq)]
pub enum FlowState {
    Counts(FlowCounts),
    Intensities(FlowIntensities),
    Proportions(FlowProportions),
}

impl FlowState {
    pub fn space(&self) -> &Arc<StrataSpace> {
        match self {
            FlowState::Counts(c) => c.space(),
            FlowState::Intensities(i) => i.space(),
            FlowState::Proportions(p) => p.space(),
        }
    }

    /// Sums fine cells into the coarse strata of `mapping`.
    pub fn aggregate(&self, mapping: &StrataMapping) -> Result<FlowState, StrataError> {
        if **self.space() != *mapping.fine {
            return Err(StrataError::SpaceMismatch);
        }
        let coarse = mapping.coarse.clone();
        Ok(match self {
            FlowState::Counts(c) => FlowState::Counts(FlowCounts::new(coarse, mapping.apply_counts(c.values()))?),
            FlowState::Intensities(i) => {
                FlowState::Intensities(FlowIntensities::new(coarse, mapping.apply(i.values()))?)
            }
            FlowState::Proportions(p) => {
                FlowState::Proportions(FlowProportions::new(coarse, mapping.apply(p.values()))?)
            }
        })
    }
}

/// Many-to-one map from fine strata onto coarse strata.
///
/// Coarse strata appear in order of first appearance among the fine strata.
/// A coarse pair is structurally zero only if all its constituent pairs are.
#[derive(Debug, Clone)]
pub struct StrataMapping {
    fine: Arc<StrataSpace>,
    coarse: Arc<StrataSpace>,
    target: Vec<usize>,
    pair_target: Vec<usize>,
}

impl StrataMapping {
    pub fn new(fine: Arc<StrataSpace>, assignment: &HashMap<String, String>) -> Result<Self, StrataError> {
        let labels = fine
            .strata()
            .iter()
            .map(|s| assignment.get(&s.id).cloned().ok_or_else(|| StrataError::MappingIncomplete(s.id.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_labels(fine, labels)
    }

    pub fn from_fn(fine: Arc<StrataSpace>, f: impl Fn(&Stratum) -> String) -> Result<Self, StrataError> {
        let labels = fine.strata().iter().map(f).collect();
        Self::from_labels(fine, labels)
    }

    pub fn identity(fine: Arc<StrataSpace>) -> Self {
        Self::from_fn(fine, |s| s.id.clone()).expect("identity mapping is total")
    }

    /// Groups single-year ages into bands of `width` years starting at `start`,
    /// keeping gender and location. Coarse ids are `"{gender}|{location}|{band}"`.
    pub fn age_bands(fine: Arc<StrataSpace>, start: u32, width: u32) -> Result<Self, StrataError> {
        let width = width.max(1);
        Self::from_fn(fine, |s| {
            let band = s.age.map_or(String::new(), |a| {
                let lo = start + (a.lo.saturating_sub(start) / width) * width;
                AgeBand { lo, hi: lo + width - 1 }.to_string()
            });
            format!("{}|{}|{}", s.gender, s.location.as_deref().unwrap_or(""), band)
        })
    }

    fn from_labels(fine: Arc<StrataSpace>, labels: Vec<String>) -> Result<Self, StrataError> {
        let mut coarse_index: HashMap<&str, usize> = HashMap::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        let mut order: Vec<&str> = Vec::new();
        let mut target = Vec::with_capacity(labels.len());
        for (i, label) in labels.iter().enumerate() {
            let c = *coarse_index.entry(label.as_str()).or_insert_with(|| {
                order.push(label);
                members.push(Vec::new());
                members.len() - 1
            });
            members[c].push(i);
            target.push(c);
        }
        let strata: Vec<Stratum> = order
            .iter()
            .zip(&members)
            .map(|(id, m)| merge_strata(id, m.iter().map(|&i| fine.stratum(i))))
            .collect();
        let ac = strata.len();
        let mut mask = vec![true; ac * ac];
        for p in fine.pairs() {
            mask[target[p.source] * ac + target[p.recipient]] = false;
        }
        let coarse = Arc::new(StrataSpace::new(strata, mask)?);
        let pair_target = fine
            .pairs()
            .iter()
            .map(|p| coarse.pair_index(target[p.source], target[p.recipient]).expect("unmasked by construction"))
            .collect();
        Ok(Self { fine, coarse, target, pair_target })
    }

    pub fn fine(&self) -> &Arc<StrataSpace> {
        &self.fine
    }

    pub fn coarse(&self) -> &Arc<StrataSpace> {
        &self.coarse
    }

    /// Coarse stratum index of fine stratum `i`.
    pub fn target(&self, i: usize) -> usize {
        self.target[i]
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.coarse.n_pairs()];
        for (v, &k) in values.iter().zip(&self.pair_target) {
            out[k] += v;
        }
        out
    }

    pub fn apply_counts(&self, values: &[u64]) -> Vec<u64> {
        let mut out = vec![0; self.coarse.n_pairs()];
        for (v, &k) in values.iter().zip(&self.pair_target) {
            out[k] += v;
        }
        out
    }
}

fn merge_strata<'a>(id: &str, mut members: impl Iterator<Item = &'a Stratum>) -> Stratum {
    let first = members.next().expect("coarse stratum has a member");
    let mut gender = first.gender;
    let mut age = first.age;
    let mut location = first.location.clone();
    for s in members {
        if s.gender != gender {
            gender = Gender::Unspecified;
        }
        age = match (age, s.age) {
            (Some(x), Some(y)) => Some(x.merge(y)),
            _ => None,
        };
        if s.location != location {
            location = None;
        }
    }
    Stratum { id: id.to_owned(), gender, age, location }
}
