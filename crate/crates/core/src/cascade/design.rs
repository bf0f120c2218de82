use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::CascadeError;
use crate::strata::{Gender, Stratum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    InterceptOnly,
    /// Location, gender and age contrasts.
    #[default]
    Additive,
    /// Location contrasts plus gender by age contrasts.
    Interaction,
    /// One indicator per stratum after the first.
    Saturated,
}

/// Covariate matrix for the logit of a per-stratum probability, without the
/// intercept column.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
    /// Column groups over adjacent ages that receive the smoothing prior.
    icar_blocks: Vec<Vec<usize>>,
}

fn levels<T: PartialEq + Clone>(values: impl Iterator<Item = T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for v in values {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

impl Design {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<f64>>, icar_blocks: Vec<Vec<usize>>) -> Result<Self, CascadeError> {
        if rows.iter().any(|r| r.len() != columns.len()) {
            return Err(CascadeError::Config("design rows and column names differ in length".into()));
        }
        if icar_blocks.iter().flatten().any(|&c| c >= columns.len()) {
            return Err(CascadeError::Config("smoothing block refers to a missing column".into()));
        }
        Ok(Self { columns, rows, icar_blocks })
    }

    pub fn intercept_only(n_strata: usize) -> Self {
        Self { columns: vec![], rows: vec![vec![]; n_strata], icar_blocks: vec![] }
    }

    /// Indicator design from stratum attributes. With `icar`, age effects keep
    /// every level and are smoothed instead of dropping a reference age.
    pub fn from_strata(strata: &[Stratum], kind: DesignKind, icar: bool) -> Result<Self, CascadeError> {
        let n = strata.len();
        let mut columns = Vec::new();
        let mut cols: Vec<Vec<f64>> = Vec::new();
        let mut blocks = Vec::new();
        let mut push = |name: String, f: &dyn Fn(&Stratum) -> bool, columns: &mut Vec<String>| {
            columns.push(name);
            cols.push(strata.iter().map(|s| if f(s) { 1.0 } else { 0.0 }).collect());
            columns.len() - 1
        };
        let locations = levels(strata.iter().map(|s| s.location.clone()));
        let genders = levels(strata.iter().map(|s| s.gender));
        let mut ages = levels(strata.iter().filter_map(|s| s.age));
        ages.sort_by_key(|a| a.lo);
        let age_lo = |s: &Stratum| s.age.map(|a| a.lo);
        match kind {
            DesignKind::InterceptOnly => {}
            DesignKind::Saturated => {
                for s in strata.iter().skip(1) {
                    let id = s.id.clone();
                    push(format!("stratum:{id}"), &move |t: &Stratum| t.id == id, &mut columns);
                }
            }
            DesignKind::Additive | DesignKind::Interaction => {
                for loc in locations.iter().skip(1) {
                    let l = loc.clone();
                    push(format!("location:{}", loc.as_deref().unwrap_or("")), &move |s: &Stratum| s.location == l, &mut columns);
                }
                let gender_main = kind == DesignKind::Additive || icar;
                if gender_main {
                    for &g in genders.iter().skip(1) {
                        push(format!("gender:{g}"), &move |s: &Stratum| s.gender == g, &mut columns);
                    }
                }
                let groups: Vec<Option<Gender>> =
                    if kind == DesignKind::Additive { vec![None] } else { genders.iter().map(|&g| Some(g)).collect() };
                for (gi, g) in groups.iter().enumerate() {
                    let mut block = Vec::new();
                    for (ai, age) in ages.iter().enumerate() {
                        // the overall reference cell is dropped unless smoothing
                        if !icar && ai == 0 && (gi == 0 || kind == DesignKind::Additive) {
                            continue;
                        }
                        let (g, lo) = (*g, age.lo);
                        let name = match g {
                            Some(g) => format!("gender_age:{g}{age}"),
                            None => format!("age:{age}"),
                        };
                        let c = push(name, &move |s: &Stratum| age_lo(s) == Some(lo) && g.is_none_or(|g| s.gender == g), &mut columns);
                        block.push(c);
                    }
                    if icar && block.len() > 1 {
                        blocks.push(block);
                    }
                }
            }
        }
        let rows = (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
        let d = Self::new(columns, rows, blocks)?;
        d.check_rank()?;
        Ok(d)
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn icar_blocks(&self) -> &[Vec<usize>] {
        &self.icar_blocks
    }

    pub fn is_smoothed(&self, column: usize) -> bool {
        self.icar_blocks.iter().flatten().any(|&c| c == column)
    }

    /// `[1 | X]` must have full column rank once one column of every smoothed
    /// block is set aside (those blocks are identified by their sum-to-zero
    /// constraint).
    pub fn check_rank(&self) -> Result<(), CascadeError> {
        let dropped: Vec<usize> = self.icar_blocks.iter().map(|b| b[0]).collect();
        let keep: Vec<usize> = (0..self.n_columns()).filter(|c| !dropped.contains(c)).collect();
        let p = keep.len() + 1;
        if self.n_rows() < p {
            return Err(CascadeError::RankDeficient { rank: self.n_rows(), columns: p });
        }
        let m = DMatrix::from_fn(self.n_rows(), p, |i, j| if j == 0 { 1.0 } else { self.rows[i][keep[j - 1]] });
        let sv = m.singular_values();
        let tol = sv.max() * 1e-10 * p as f64;
        let rank = sv.iter().filter(|s| **s > tol).count();
        if rank < p {
            return Err(CascadeError::RankDeficient { rank, columns: p });
        }
        Ok(())
    }
}
