use super::flows::{FlowCounts, FlowProportions};
use super::StrataError;

/// Sampled and total individuals in one stratum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampledCount {
    pub sampled: u64,
    pub total: u64,
}

impl SampledCount {
    pub fn new(sampled: u64, total: u64) -> Result<Self, StrataError> {
        if sampled > total {
            return Err(StrataError::EstimatorUndefined(format!("{sampled} sampled out of {total}")));
        }
        Ok(Self { sampled, total })
    }

    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.sampled as f64 / self.total as f64
        }
    }
}

/// Observed flow shares `n_ab / n+`.
pub fn naive_estimate(counts: &FlowCounts) -> Result<FlowProportions, StrataError> {
    if counts.total() == 0 {
        return Err(StrataError::EstimatorUndefined("no observed flow events".into()));
    }
    FlowProportions::from_weights(counts.space().clone(), counts.as_f64())
}

/// Sampling-adjusted maximum-likelihood flows from per-stratum sampled fractions.
pub fn mle_estimate(counts: &FlowCounts, sampled: &[SampledCount]) -> Result<FlowProportions, StrataError> {
    let xi: Vec<f64> = sampled.iter().map(SampledCount::fraction).collect();
    mle_with_probabilities(counts, &xi, &xi)
}

/// Inverse-probability-weighted flows with separate source and recipient probabilities.
pub fn mle_with_probabilities(
    counts: &FlowCounts,
    xi_source: &[f64],
    xi_recipient: &[f64],
) -> Result<FlowProportions, StrataError> {
    let space = counts.space();
    check_xi_len(space.len(), xi_source)?;
    check_xi_len(space.len(), xi_recipient)?;
    if counts.total() == 0 {
        return Err(StrataError::EstimatorUndefined("no observed flow events".into()));
    }
    let mut weights = Vec::with_capacity(space.n_pairs());
    for (p, &n) in space.pairs().iter().zip(counts.values()) {
        let q = xi_source[p.source] * xi_recipient[p.recipient];
        if n == 0 {
            weights.push(0.0);
        } else if q > 0.0 && q <= 1.0 {
            weights.push(n as f64 / q);
        } else {
            return Err(StrataError::EstimatorUndefined(format!(
                "sampling probability {q} on pair {} with {n} observed events",
                space.pair_label(weights.len())
            )));
        }
    }
    FlowProportions::from_weights(space.clone(), weights)
}

/// Expected number of transmission events under per-stratum sampling `xi`.
pub fn expected_total(counts: &FlowCounts, xi: &[f64]) -> Result<f64, StrataError> {
    expected_total_split(counts, xi, xi)
}

pub fn expected_total_split(counts: &FlowCounts, xi_source: &[f64], xi_recipient: &[f64]) -> Result<f64, StrataError> {
    let space = counts.space();
    check_xi_len(space.len(), xi_source)?;
    check_xi_len(space.len(), xi_recipient)?;
    for (i, &x) in xi_source.iter().chain(xi_recipient).enumerate() {
        if !(x > 0.0 && x <= 1.0) {
            let id = &space.stratum(i % space.len()).id;
            return Err(StrataError::InvalidProbability { stratum: id.clone(), value: x });
        }
    }
    Ok(space
        .pairs()
        .iter()
        .zip(counts.values())
        .map(|(p, &n)| {
            let q = xi_source[p.source] * xi_recipient[p.recipient];
            if n == 0 { (1.0 - q) / q } else { n as f64 / q }
        })
        .sum())
}

fn check_xi_len(a: usize, xi: &[f64]) -> Result<(), StrataError> {
    if xi.len() != a {
        return Err(StrataError::LengthMismatch { expected: a, got: xi.len() });
    }
    Ok(())
}
