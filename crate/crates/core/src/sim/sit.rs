//! Structured susceptible-infected-treated epidemic with cumulative
//! transmission accounting, solved deterministically or by exact simulation.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rk45::{solve, Tolerance};
use super::{SimError, SimOutput, TrajectoryPoint, TransmissionEvent};
use crate::rng::{task_rng, TaskRng};
use crate::strata::{FlowProportions, Gender, StrataSpace, Stratum};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SitGroup {
    pub id: String,
    pub gender: Gender,
    pub location: String,
    pub susceptible: f64,
    pub infected: f64,
    #[serde(default)]
    pub treated: f64,
}

/// Transmission rate from infected members of `source` to susceptible
/// members of `recipient`, per infected as a fraction of the source group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SitRate {
    pub source: String,
    pub recipient: String,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SitModel {
    pub groups: Vec<SitGroup>,
    pub rates: Vec<SitRate>,
    /// Viral suppression rate (I -> T).
    pub gamma: f64,
    /// Per-capita birth and death rate.
    pub mu: f64,
}

/// Simulation horizon, flow-counting window and recording interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeSpan {
    pub end: f64,
    pub window: [f64; 2],
    pub record_every: f64,
}

impl TimeSpan {
    pub fn whole(end: f64, record_every: f64) -> Self {
        Self { end, window: [0.0, end], record_every }
    }

    fn validate(&self) -> Result<(), SimError> {
        let [w0, w1] = self.window;
        if !(self.end > 0.0 && w0 >= 0.0 && w0 <= w1 && w1 <= self.end && self.record_every > 0.0) {
            return Err(SimError::Invalid(format!("bad time span {self:?}")));
        }
        Ok(())
    }

    fn record_times(&self) -> Vec<f64> {
        let k = (self.end / self.record_every).floor() as usize;
        let mut t: Vec<f64> = (0..=k).map(|i| i as f64 * self.record_every).collect();
        if *t.last().unwrap() < self.end {
            t.push(self.end);
        }
        t
    }
}

const FM: [(&str, &str, f64); 4] = [("a", "a", 0.0713), ("b", "a", 0.0071), ("a", "b", 0.0122), ("b", "b", 0.0713)];
const MF: [(&str, &str, f64); 4] = [("a", "a", 0.1019), ("b", "a", 0.0173), ("a", "b", 0.0224), ("b", "b", 0.1019)];

impl SitModel {
    /// Two locations `a` (40%) and `b` (60%), half men and half women, with
    /// heterosexual transmission only and the reference rates.
    pub fn two_group(n_total: f64, initial_prevalence: f64) -> Self {
        let mut groups = Vec::new();
        for (loc, share) in [("a", 0.4), ("b", 0.6)] {
            for g in [Gender::M, Gender::F] {
                let n = (n_total * share * 0.5).round();
                let infected = (n * initial_prevalence).round();
                groups.push(SitGroup {
                    id: format!("{g}|{loc}"),
                    gender: g,
                    location: loc.into(),
                    susceptible: n - infected,
                    infected,
                    treated: 0.0,
                });
            }
        }
        let mut rates = Vec::new();
        for (src, rec, rate) in FM {
            rates.push(SitRate { source: format!("F|{src}"), recipient: format!("M|{rec}"), rate });
        }
        for (src, rec, rate) in MF {
            rates.push(SitRate { source: format!("M|{src}"), recipient: format!("F|{rec}"), rate });
        }
        Self { groups, rates, gamma: 0.0444, mu: 0.01667 }
    }

    /// Strata with every pair lacking a rate masked.
    pub fn space(&self) -> Result<Arc<StrataSpace>, SimError> {
        let strata: Vec<Stratum> =
            self.groups.iter().map(|g| Stratum::new(g.id.clone(), g.gender, None, Some(&g.location))).collect();
        let a = strata.len();
        let lookup = StrataSpace::unmasked(strata.clone())?;
        let mut mask = vec![true; a * a];
        for r in &self.rates {
            let (s, t) = (lookup.index_of(&r.source)?, lookup.index_of(&r.recipient)?);
            if !mask[s * a + t] {
                return Err(SimError::Invalid(format!("duplicate rate {}->{}", r.source, r.recipient)));
            }
            mask[s * a + t] = false;
        }
        Ok(Arc::new(StrataSpace::new(strata, mask)?))
    }

    fn validate(&self) -> Result<(), SimError> {
        let bad = |v: f64| !(v >= 0.0 && v.is_finite());
        if bad(self.gamma) || bad(self.mu) || self.rates.iter().any(|r| bad(r.rate)) {
            return Err(SimError::Invalid("rates must be finite and non-negative".into()));
        }
        for g in &self.groups {
            if bad(g.susceptible) || bad(g.infected) || bad(g.treated) || g.susceptible + g.infected + g.treated <= 0.0 {
                return Err(SimError::Invalid(format!("group `{}` has invalid counts", g.id)));
            }
        }
        Ok(())
    }

    /// Rate per space pair.
    fn pair_rates(&self, space: &StrataSpace) -> Vec<f64> {
        let mut beta = vec![0.0; space.n_pairs()];
        for r in &self.rates {
            let (s, t) = (space.index_of(&r.source).unwrap(), space.index_of(&r.recipient).unwrap());
            beta[space.pair_index(s, t).unwrap()] = r.rate;
        }
        beta
    }
}

fn flows_from(space: &Arc<StrataSpace>, z: Vec<f64>) -> Result<FlowProportions, SimError> {
    let total: f64 = z.iter().sum();
    if total > 0.0 {
        Ok(FlowProportions::from_weights(space.clone(), z)?)
    } else {
        // no transmissions: report a uniform placeholder so outputs stay on the simplex
        let l = space.n_pairs() as f64;
        Ok(FlowProportions::new(space.clone(), vec![1.0 / l; space.n_pairs()])?)
    }
}

/// Deterministic solution; `z` holds the expected transmissions in the window.
pub fn simulate_sit_ode(model: &SitModel, span: TimeSpan, tol: Tolerance) -> Result<SimOutput, SimError> {
    model.validate()?;
    span.validate()?;
    let space = model.space()?;
    let a = space.len();
    let beta = model.pair_rates(&space);
    let pairs = space.pairs().to_vec();
    let (gamma, mu) = (model.gamma, model.mu);
    let rhs = |_t: f64, y: &[f64], d: &mut [f64]| {
        d.iter_mut().for_each(|v| *v = 0.0);
        for s in 0..a {
            let (sus, inf, tr) = (y[3 * s], y[3 * s + 1], y[3 * s + 2]);
            let n = sus + inf + tr;
            d[3 * s] += mu * n - mu * sus;
            d[3 * s + 1] += -(gamma + mu) * inf;
            d[3 * s + 2] += gamma * inf - mu * tr;
        }
        for (k, p) in pairs.iter().enumerate() {
            let src = &y[3 * p.source..3 * p.source + 3];
            let n_src = src[0] + src[1] + src[2];
            let flow = beta[k] * src[1] * y[3 * p.recipient] / n_src;
            d[3 * p.recipient] -= flow;
            d[3 * p.recipient + 1] += flow;
            d[3 * a + k] = flow;
        }
    };
    let mut y0: Vec<f64> = model.groups.iter().flat_map(|g| [g.susceptible, g.infected, g.treated]).collect();
    y0.extend(std::iter::repeat_n(0.0, pairs.len()));
    let record = span.record_times();
    let mut times = record.clone();
    times.extend(span.window);
    times.sort_by(f64::total_cmp);
    times.dedup();
    let states = solve(rhs, 0.0, &y0, &times, tol)?;
    let at = |t: f64| &states[times.iter().position(|v| *v == t).expect("requested time")];
    for y in &states {
        for (s, g) in model.groups.iter().enumerate() {
            let n: f64 = y[3 * s..3 * s + 3].iter().sum();
            for (c, name) in ["S", "I", "T"].into_iter().enumerate() {
                let v = y[3 * s + c];
                if v < -1e-6 * n.max(1.0) {
                    return Err(SimError::NegativeCompartment { stratum: g.id.clone(), compartment: name, value: v });
                }
            }
        }
    }
    let trajectory = record
        .iter()
        .map(|&t| {
            let y = at(t);
            TrajectoryPoint { t, compartments: (0..a).map(|s| [y[3 * s], y[3 * s + 1], y[3 * s + 2]]).collect() }
        })
        .collect();
    let (y0w, y1w) = (at(span.window[0]), at(span.window[1]));
    let z: Vec<f64> = (0..pairs.len()).map(|k| y1w[3 * a + k] - y0w[3 * a + k]).collect();
    let pi = flows_from(&space, z.clone())?;
    Ok(SimOutput { space, trajectory, z, pi, intensity: None, events: Vec::new(), observed: None })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GillespieOptions {
    pub max_events: usize,
}

impl Default for GillespieOptions {
    fn default() -> Self {
        Self { max_events: 1_000_000 }
    }
}

/// Time to the next event when the total rate is `rate`.
pub fn waiting_time(rng: &mut TaskRng, rate: f64) -> f64 {
    -(1.0 - rng.random::<f64>()).ln() / rate
}

/// Exact event simulation. Deaths are immediately replaced by susceptible
/// births, so susceptible deaths leave the state unchanged and are skipped.
pub fn simulate_sit_gillespie(
    model: &SitModel,
    span: TimeSpan,
    seed: u64,
    options: GillespieOptions,
) -> Result<SimOutput, SimError> {
    model.validate()?;
    span.validate()?;
    if model.groups.iter().any(|g| [g.susceptible, g.infected, g.treated].iter().any(|v| v.fract() != 0.0)) {
        return Err(SimError::Invalid("stochastic simulation needs integer counts".into()));
    }
    let space = model.space()?;
    let a = space.len();
    let beta = model.pair_rates(&space);
    let pairs = space.pairs().to_vec();
    let mut rng = task_rng(seed, &[0]);
    let mut next_id = 0u64;
    let mut sus: Vec<u64> = model.groups.iter().map(|g| g.susceptible as u64).collect();
    let mut treated: Vec<u64> = model.groups.iter().map(|g| g.treated as u64).collect();
    let mut infected: Vec<Vec<u64>> = model
        .groups
        .iter()
        .map(|g| {
            (0..g.infected as u64)
                .map(|_| {
                    next_id += 1;
                    next_id
                })
                .collect()
        })
        .collect();
    let record = span.record_times();
    let mut next_record = 0;
    let mut trajectory = Vec::with_capacity(record.len());
    let mut z = vec![0.0; pairs.len()];
    let mut events = Vec::new();
    let mut props = vec![0.0; pairs.len() + 3 * a];
    let mut t = 0.0;
    let mut n_events = 0usize;
    let snapshot = |t: f64, sus: &[u64], inf: &[Vec<u64>], tr: &[u64]| TrajectoryPoint {
        t,
        compartments: (0..a).map(|s| [sus[s] as f64, inf[s].len() as f64, tr[s] as f64]).collect(),
    };
    loop {
        for (k, p) in pairs.iter().enumerate() {
            let n_src = (sus[p.source] + infected[p.source].len() as u64 + treated[p.source]) as f64;
            props[k] = beta[k] * infected[p.source].len() as f64 * sus[p.recipient] as f64 / n_src;
        }
        let off = pairs.len();
        for s in 0..a {
            let i = infected[s].len() as f64;
            props[off + 3 * s] = model.gamma * i;
            props[off + 3 * s + 1] = model.mu * i;
            props[off + 3 * s + 2] = model.mu * treated[s] as f64;
        }
        let total: f64 = props.iter().sum();
        let t_next = if total > 0.0 { t + waiting_time(&mut rng, total) } else { f64::INFINITY };
        while next_record < record.len() && record[next_record] <= t_next.min(span.end) {
            trajectory.push(snapshot(record[next_record], &sus, &infected, &treated));
            next_record += 1;
        }
        if t_next > span.end {
            break;
        }
        t = t_next;
        n_events += 1;
        if n_events > options.max_events {
            return Err(SimError::EventBudget { limit: options.max_events, t });
        }
        let mut u = rng.random::<f64>() * total;
        let mut e = props.len() - 1;
        for (i, p) in props.iter().enumerate() {
            if u < *p {
                e = i;
                break;
            }
            u -= p;
        }
        // rounding can land on a zero-propensity tail entry; walk back
        while props[e] == 0.0 && e > 0 {
            e -= 1;
        }
        let pick = |rng: &mut TaskRng, v: &mut Vec<u64>| {
            let j = rng.random_range(0..v.len());
            v.swap_remove(j)
        };
        if e < off {
            let p = pairs[e];
            let source_id = infected[p.source][rng.random_range(0..infected[p.source].len())];
            next_id += 1;
            sus[p.recipient] -= 1;
            infected[p.recipient].push(next_id);
            if t >= span.window[0] && t <= span.window[1] {
                z[e] += 1.0;
                events.push(TransmissionEvent {
                    time: t,
                    source_id,
                    recipient_id: next_id,
                    source: p.source,
                    recipient: p.recipient,
                });
            }
        } else {
            let s = (e - off) / 3;
            match (e - off) % 3 {
                0 => {
                    pick(&mut rng, &mut infected[s]);
                    treated[s] += 1;
                }
                1 => {
                    pick(&mut rng, &mut infected[s]);
                    sus[s] += 1;
                }
                _ => {
                    treated[s] -= 1;
                    sus[s] += 1;
                }
            }
        }
    }
    let pi = flows_from(&space, z.clone())?;
    Ok(SimOutput { space, trajectory, z, pi, intensity: None, events, observed: None })
}
