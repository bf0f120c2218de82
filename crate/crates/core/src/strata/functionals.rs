use serde_json::{json, Value};

use super::flows::FlowProportions;
use super::space::StrataSpace;
use super::StrataError;

/// Distribution of origins of infections arriving in `recipient`.
pub fn sources_of(space: &StrataSpace, pi: &[f64], recipient: usize) -> Result<Vec<f64>, StrataError> {
    let col: Vec<f64> = (0..space.len())
        .map(|a| space.pair_index(a, recipient).map_or(0.0, |k| pi[k]))
        .collect();
    normalized(col, || format!("no inflow into `{}`", space.stratum(recipient).id))
}

/// Distribution of destinations of infections leaving `source`.
pub fn recipients_of(space: &StrataSpace, pi: &[f64], source: usize) -> Result<Vec<f64>, StrataError> {
    let row: Vec<f64> = (0..space.len())
        .map(|b| space.pair_index(source, b).map_or(0.0, |k| pi[k]))
        .collect();
    normalized(row, || format!("no outflow from `{}`", space.stratum(source).id))
}

/// `pi_ab / pi_ba`.
pub fn flow_ratio_of(space: &StrataSpace, pi: &[f64], a: usize, b: usize) -> Result<f64, StrataError> {
    let get = |s, r| space.pair_index(s, r).map_or(0.0, |k| pi[k]);
    let (num, den) = (get(a, b), get(b, a));
    if den > 0.0 {
        Ok(num / den)
    } else {
        Err(StrataError::UndefinedFunctional(format!(
            "no flow from `{}` to `{}`",
            space.stratum(b).id,
            space.stratum(a).id
        )))
    }
}

fn normalized(v: Vec<f64>, why: impl FnOnce() -> String) -> Result<Vec<f64>, StrataError> {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        Ok(v.into_iter().map(|x| x / s).collect())
    } else {
        Err(StrataError::UndefinedFunctional(why()))
    }
}

impl FlowProportions {
    pub fn sources(&self, recipient: usize) -> Result<Vec<f64>, StrataError> {
        sources_of(self.space(), self.values(), recipient)
    }

    pub fn recipients(&self, source: usize) -> Result<Vec<f64>, StrataError> {
        recipients_of(self.space(), self.values(), source)
    }

    pub fn flow_ratio(&self, a: usize, b: usize) -> Result<f64, StrataError> {
        flow_ratio_of(self.space(), self.values(), a, b)
    }

    pub fn summary_functionals(&self) -> SummaryFunctionals {
        SummaryFunctionals::compute(self)
    }

    /// Labelled JSON: strata catalog plus one record per non-masked pair.
    pub fn to_json(&self) -> Value {
        let space = self.space();
        let flows: Vec<Value> = space
            .pairs()
            .iter()
            .zip(self.values())
            .map(|(p, v)| json!({"source": space.stratum(p.source).id, "recipient": space.stratum(p.recipient).id, "value": v}))
            .collect();
        json!({"strata": space.strata(), "flows": flows})
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowRatio {
    pub a: usize,
    pub b: usize,
    pub value: Option<f64>,
}

/// Sources per recipient, recipients per source, and flow ratios for every
/// unordered pair of strata with at least one open direction. Undefined
/// entries are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryFunctionals {
    pub labels: Vec<String>,
    pub sources: Vec<Option<Vec<f64>>>,
    pub recipients: Vec<Option<Vec<f64>>>,
    pub ratios: Vec<FlowRatio>,
}

impl SummaryFunctionals {
    pub fn compute(pi: &FlowProportions) -> Self {
        let space = pi.space();
        let a = space.len();
        let mut ratios = Vec::new();
        for i in 0..a {
            for j in (i + 1)..a {
                if space.pair_index(i, j).is_some() || space.pair_index(j, i).is_some() {
                    ratios.push(FlowRatio { a: i, b: j, value: pi.flow_ratio(i, j).ok() });
                }
            }
        }
        Self {
            labels: space.ids().map(str::to_owned).collect(),
            sources: (0..a).map(|b| pi.sources(b).ok()).collect(),
            recipients: (0..a).map(|s| pi.recipients(s).ok()).collect(),
            ratios,
        }
    }

    pub fn to_json(&self) -> Value {
        let labelled = |v: &Option<Vec<f64>>| match v {
            Some(v) => Value::Object(self.labels.iter().cloned().zip(v.iter().map(|x| json!(x))).collect()),
            None => Value::Null,
        };
        json!({
            "sources": self.labels.iter().zip(&self.sources).map(|(l, v)| json!({"recipient": l, "sources": labelled(v)})).collect::<Vec<_>>(),
            "recipients": self.labels.iter().zip(&self.recipients).map(|(l, v)| json!({"source": l, "recipients": labelled(v)})).collect::<Vec<_>>(),
            "flow_ratios": self.ratios.iter().map(|r| json!({"a": self.labels[r.a], "b": self.labels[r.b], "ratio": r.value})).collect::<Vec<_>>(),
        })
    }
}
