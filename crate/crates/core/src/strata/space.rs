use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::StrataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
    Unspecified,
}

impl FromStr for Gender {
    type Err = StrataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m" | "male" | "men" => Ok(Gender::M),
            "f" | "female" | "women" => Ok(Gender::F),
            "" | "u" | "na" | "unspecified" => Ok(Gender::Unspecified),
            other => Err(StrataError::Parse(format!("unrecognised gender `{other}`"))),
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::M => "M",
            Gender::F => "F",
            Gender::Unspecified => "",
        })
    }
}

/// Inclusive band of integer ages; a single year has `lo == hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgeBand {
    pub lo: u32,
    pub hi: u32,
}

impl AgeBand {
    pub fn year(age: u32) -> Self {
        Self { lo: age, hi: age }
    }

    pub fn new(lo: u32, hi: u32) -> Result<Self, StrataError> {
        if lo > hi {
            return Err(StrataError::Parse(format!("age band {lo}-{hi} is reversed")));
        }
        Ok(Self { lo, hi })
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi) as f64
    }

    pub(crate) fn merge(self, other: AgeBand) -> AgeBand {
        AgeBand { lo: self.lo.min(other.lo), hi: self.hi.max(other.hi) }
    }
}

impl fmt::Display for AgeBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.lo == self.hi {
            write!(f, "{}", self.lo)
        } else {
            write!(f, "{}-{}", self.lo, self.hi)
        }
    }
}

impl FromStr for AgeBand {
    type Err = StrataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || StrataError::Parse(format!("unrecognised age `{s}`"));
        let s = s.trim();
        match s.split_once('-') {
            Some((lo, hi)) => AgeBand::new(
                lo.trim().parse().map_err(|_| bad())?,
                hi.trim().parse().map_err(|_| bad())?,
            ),
            None => Ok(AgeBand::year(s.parse().map_err(|_| bad())?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub id: String,
    pub gender: Gender,
    pub age: Option<AgeBand>,
    pub location: Option<String>,
}

impl Stratum {
    pub fn new(id: impl Into<String>, gender: Gender, age: Option<AgeBand>, location: Option<&str>) -> Self {
        Self { id: id.into(), gender, age, location: location.map(str::to_owned) }
    }

    /// A stratum carrying only an id.
    pub fn plain(id: impl Into<String>) -> Self {
        Self::new(id, Gender::Unspecified, None, None)
    }
}

/// Ordered pair of stratum indices `(source, recipient)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pair {
    pub source: usize,
    pub recipient: usize,
}

/// Ordered catalog of strata plus the structural-zero mask over ordered pairs.
///
/// Flow vectors index the non-masked pairs in row-major (source-major) order.
#[derive(Debug, Clone, PartialEq)]
pub struct StrataSpace {
    strata: Vec<Stratum>,
    index: HashMap<String, usize>,
    mask: Vec<bool>,
    pairs: Vec<Pair>,
    pair_lookup: Vec<Option<usize>>,
}

impl StrataSpace {
    /// `mask[a * A + b]` is true when flow from `a` to `b` is structurally zero.
    pub fn new(strata: Vec<Stratum>, mask: Vec<bool>) -> Result<Self, StrataError> {
        let a = strata.len();
        if a == 0 {
            return Err(StrataError::Empty);
        }
        if mask.len() != a * a {
            return Err(StrataError::LengthMismatch { expected: a * a, got: mask.len() });
        }
        let mut index = HashMap::with_capacity(a);
        for (i, s) in strata.iter().enumerate() {
            if index.insert(s.id.clone(), i).is_some() {
                return Err(StrataError::DuplicateStratum(s.id.clone()));
            }
        }
        let mut pairs = Vec::new();
        let mut pair_lookup = vec![None; a * a];
        for src in 0..a {
            for rec in 0..a {
                if !mask[src * a + rec] {
                    pair_lookup[src * a + rec] = Some(pairs.len());
                    pairs.push(Pair { source: src, recipient: rec });
                }
            }
        }
        if pairs.is_empty() {
            return Err(StrataError::AllMasked);
        }
        Ok(Self { strata, index, mask, pairs, pair_lookup })
    }

    pub fn unmasked(strata: Vec<Stratum>) -> Result<Self, StrataError> {
        let a = strata.len();
        Self::new(strata, vec![false; a * a])
    }

    /// Masks every pair whose endpoints share a specified gender.
    pub fn with_gender_mask(strata: Vec<Stratum>) -> Result<Self, StrataError> {
        let a = strata.len();
        let mut mask = vec![false; a * a];
        for (i, si) in strata.iter().enumerate() {
            for (j, sj) in strata.iter().enumerate() {
                mask[i * a + j] = si.gender != Gender::Unspecified && si.gender == sj.gender;
            }
        }
        Self::new(strata, mask)
    }

    /// Men and women at every single-year age and location, same-gender pairs
    /// masked. Ids are `"{gender}|{location}|{age}"`; without locations the
    /// location part is empty.
    pub fn age_location_grid(ages: std::ops::RangeInclusive<u32>, locations: &[&str]) -> Result<Self, StrataError> {
        let locs: Vec<Option<&str>> = if locations.is_empty() { vec![None] } else { locations.iter().map(|l| Some(*l)).collect() };
        let mut strata = Vec::new();
        for g in [Gender::M, Gender::F] {
            for loc in &locs {
                for age in ages.clone() {
                    let id = format!("{g}|{}|{age}", loc.unwrap_or(""));
                    strata.push(Stratum::new(id, g, Some(AgeBand::year(age)), *loc));
                }
            }
        }
        Self::with_gender_mask(strata)
    }

    /// Number of strata `A`.
    pub fn len(&self) -> usize {
        self.strata.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strata.is_empty()
    }

    /// Number of non-masked ordered pairs `L`.
    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn strata(&self) -> &[Stratum] {
        &self.strata
    }

    pub fn stratum(&self, i: usize) -> &Stratum {
        &self.strata[i]
    }

    pub fn index_of(&self, id: &str) -> Result<usize, StrataError> {
        self.index.get(id).copied().ok_or_else(|| StrataError::UnknownStratum(id.to_owned()))
    }

    pub fn is_masked(&self, source: usize, recipient: usize) -> bool {
        self.mask[source * self.len() + recipient]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn pair(&self, k: usize) -> Pair {
        self.pairs[k]
    }

    /// Position of `(source, recipient)` in flow vectors, `None` if masked.
    pub fn pair_index(&self, source: usize, recipient: usize) -> Option<usize> {
        self.pair_lookup[source * self.len() + recipient]
    }

    pub fn pair_label(&self, k: usize) -> String {
        let p = self.pairs[k];
        format!("{}->{}", self.strata[p.source].id, self.strata[p.recipient].id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.strata.iter().map(|s| s.id.as_str())
    }
}
