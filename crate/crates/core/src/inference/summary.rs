//! Posterior quantile tables for flows and derived functionals.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::draws::PosteriorDraws;
use super::InferenceError;
use crate::stats;
use crate::strata::{flow_ratio_of, recipients_of, sources_of, Gender, StrataMapping, StrataSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Functional {
    Flows,
    Sources,
    Recipients,
    Ratios,
    /// Share of each recipient age's infections by male age relative to the
    /// female partner: younger or same, 1-5 years older, over 5 years older.
    AgeGap,
}

impl Functional {
    pub const ALL: [Functional; 5] =
        [Functional::Flows, Functional::Sources, Functional::Recipients, Functional::Ratios, Functional::AgeGap];

    pub fn name(self) -> &'static str {
        match self {
            Functional::Flows => "flows",
            Functional::Sources => "sources",
            Functional::Recipients => "recipients",
            Functional::Ratios => "ratios",
            Functional::AgeGap => "age_gap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileRow {
    pub quantity: String,
    pub median: Option<f64>,
    pub q2_5: Option<f64>,
    pub q25: Option<f64>,
    pub q75: Option<f64>,
    pub q97_5: Option<f64>,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    /// Posterior sd / mean.
    pub cv: Option<f64>,
    pub defined_draws: usize,
    pub total_draws: usize,
    /// Undefined on more than half of the draws.
    pub flagged: bool,
}

impl QuantileRow {
    pub fn from_values(quantity: String, values: &[Option<f64>]) -> Self {
        let defined: Vec<f64> = values.iter().flatten().copied().collect();
        let total = values.len();
        let flagged = 2 * defined.len() < total;
        if defined.is_empty() {
            return Self {
                quantity,
                median: None,
                q2_5: None,
                q25: None,
                q75: None,
                q97_5: None,
                mean: None,
                sd: None,
                cv: None,
                defined_draws: 0,
                total_draws: total,
                flagged: true,
            };
        }
        let s = stats::sorted(&defined);
        let q = |p| Some(stats::quantile_sorted(&s, p));
        let mean = stats::mean(&defined);
        let constant = defined.iter().all(|v| *v == defined[0]);
        let sd = if constant { 0.0 } else { stats::sd(&defined) };
        let cv = if sd == 0.0 {
            Some(0.0)
        } else if mean != 0.0 {
            Some(sd / mean.abs())
        } else {
            None
        };
        Self {
            quantity,
            median: q(0.5),
            q2_5: q(0.025),
            q25: q(0.25),
            q75: q(0.75),
            q97_5: q(0.975),
            mean: Some(mean),
            sd: Some(sd),
            cv,
            defined_draws: defined.len(),
            total_draws: total,
            flagged,
        }
    }

    pub fn contains(&self, value: f64) -> bool {
        matches!((self.q2_5, self.q97_5), (Some(lo), Some(hi)) if lo <= value && value <= hi)
    }
}

/// Flow-proportion draws in the pair order of `space`, read from `pi[a->b]`.
pub fn pi_draws(draws: &PosteriorDraws, space: &StrataSpace) -> Result<Vec<Vec<f64>>, InferenceError> {
    let idx: Vec<usize> = (0..space.n_pairs())
        .map(|k| draws.index_of(&format!("pi[{}]", space.pair_label(k))))
        .collect::<Result<_, _>>()?;
    Ok(draws.iter_draws().map(|d| idx.iter().map(|&i| d[i]).collect()).collect())
}

/// Per-draw values of a functional: (quantity names, draws x quantities).
pub fn functional_draws(
    pis: &[Vec<f64>],
    space: &StrataSpace,
    functional: Functional,
) -> (Vec<String>, Vec<Vec<Option<f64>>>) {
    let a = space.len();
    let id = |i: usize| space.stratum(i).id.as_str();
    match functional {
        Functional::Flows => {
            let names = (0..space.n_pairs()).map(|k| format!("pi[{}]", space.pair_label(k))).collect();
            (names, pis.iter().map(|p| p.iter().map(|v| Some(*v)).collect()).collect())
        }
        Functional::Sources | Functional::Recipients => {
            let sources = functional == Functional::Sources;
            let pairs = space.pairs();
            let prefix = functional.name();
            let names = pairs.iter().map(|p| format!("{prefix}[{}->{}]", id(p.source), id(p.recipient))).collect();
            let values = pis
                .iter()
                .map(|pi| {
                    let per: Vec<Option<Vec<f64>>> = (0..a)
                        .map(|s| if sources { sources_of(space, pi, s) } else { recipients_of(space, pi, s) }.ok())
                        .collect();
                    pairs
                        .iter()
                        .map(|p| {
                            if sources {
                                per[p.recipient].as_ref().map(|v| v[p.source])
                            } else {
                                per[p.source].as_ref().map(|v| v[p.recipient])
                            }
                        })
                        .collect()
                })
                .collect();
            (names, values)
        }
        Functional::Ratios => {
            let pairs: Vec<(usize, usize)> = (0..a)
                .flat_map(|i| (i + 1..a).map(move |j| (i, j)))
                .filter(|&(i, j)| space.pair_index(i, j).is_some() && space.pair_index(j, i).is_some())
                .collect();
            let names = pairs.iter().map(|&(i, j)| format!("ratio[{}/{}]", id(i), id(j))).collect();
            let values = pis
                .iter()
                .map(|pi| pairs.iter().map(|&(i, j)| flow_ratio_of(space, pi, i, j).ok()).collect())
                .collect();
            (names, values)
        }
        Functional::AgeGap => age_gap_draws(pis, space),
    }
}

const GAP_LABELS: [&str; 3] = ["younger_or_same", "older_1_5", "older_over_5"];

fn gap_category(male_age: f64, female_age: f64) -> usize {
    let d = male_age - female_age;
    if d <= 0.0 {
        0
    } else if d <= 5.0 {
        1
    } else {
        2
    }
}

fn age_gap_draws(pis: &[Vec<f64>], space: &StrataSpace) -> (Vec<String>, Vec<Vec<Option<f64>>>) {
    // rows keyed by (recipient gender, recipient age); pairs without ages or
    // opposite genders are ignored
    let mut rows: Vec<(Gender, String)> = Vec::new();
    let mut cell: Vec<Option<(usize, usize)>> = Vec::with_capacity(space.n_pairs());
    for p in space.pairs() {
        let (s, r) = (space.stratum(p.source), space.stratum(p.recipient));
        let key = match (s.gender, r.gender, s.age, r.age) {
            (Gender::M, Gender::F, Some(sa), Some(ra)) => Some((gap_category(sa.midpoint(), ra.midpoint()), r)),
            (Gender::F, Gender::M, Some(sa), Some(ra)) => Some((gap_category(ra.midpoint(), sa.midpoint()), r)),
            _ => None,
        };
        cell.push(key.map(|(cat, r)| {
            let row_key = (r.gender, r.age.expect("checked").to_string());
            let row = rows.iter().position(|k| *k == row_key).unwrap_or_else(|| {
                rows.push(row_key);
                rows.len() - 1
            });
            (row, cat)
        }));
    }
    let names = rows
        .iter()
        .flat_map(|(g, age)| GAP_LABELS.iter().map(move |l| format!("age_gap[{g}{age}:{l}]")))
        .collect();
    let values = pis
        .iter()
        .map(|pi| {
            let mut acc = vec![0.0; rows.len() * 3];
            for (k, c) in cell.iter().enumerate() {
                if let Some((row, cat)) = c {
                    acc[row * 3 + cat] += pi[k];
                }
            }
            acc.chunks(3)
                .flat_map(|c| {
                    let s: f64 = c.iter().sum();
                    c.iter().map(move |v| (s > 0.0).then(|| v / s))
                })
                .collect()
        })
        .collect();
    (names, values)
}

/// Quantile table of a functional of `pi` draws, optionally after mapping
/// each draw onto coarser strata.
pub fn summarize(
    draws: &PosteriorDraws,
    space: &Arc<StrataSpace>,
    functional: Functional,
    mapping: Option<&StrataMapping>,
) -> Result<Vec<QuantileRow>, InferenceError> {
    let mut pis = pi_draws(draws, space)?;
    let mut target = space.clone();
    if let Some(m) = mapping {
        if m.fine().ids().ne(space.ids()) {
            return Err(InferenceError::Shape("mapping does not match the draws' strata".into()));
        }
        pis = pis.iter().map(|p| m.apply(p)).collect();
        target = m.coarse().clone();
    }
    let (names, values) = functional_draws(&pis, &target, functional);
    Ok(names
        .into_iter()
        .enumerate()
        .map(|(q, name)| {
            let column: Vec<Option<f64>> = values.iter().map(|v| v[q]).collect();
            QuantileRow::from_values(name, &column)
        })
        .collect())
}

pub fn write_table(rows: &[QuantileRow], writer: impl Write) -> Result<(), InferenceError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r).map_err(|e| InferenceError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| InferenceError::Io(e.to_string()))
}
