use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use super::{check_probabilities, SimError, TransmissionEvent};
use crate::rng::task_rng;
use crate::strata::{FlowCounts, StrataSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThinningMode {
    /// `n_ab ~ Binomial(z_ab, ξ^S_a ξ^R_b)`.
    #[default]
    PairLevel,
    /// One Bernoulli sampling status per individual; an event is observed
    /// when both its individuals are sampled.
    IndividualLevel,
}

pub enum ThinInput<'a> {
    Counts(&'a [u64]),
    Events(&'a [TransmissionEvent]),
}

pub fn thin_observations(
    input: ThinInput<'_>,
    space: &Arc<StrataSpace>,
    xi_source: &[f64],
    xi_recipient: &[f64],
    mode: ThinningMode,
    seed: u64,
) -> Result<FlowCounts, SimError> {
    let a = space.len();
    check_probabilities(xi_source, a, "xi_source")?;
    check_probabilities(xi_recipient, a, "xi_recipient")?;
    let mut rng = task_rng(seed, &[0]);
    let pair_of = |e: &TransmissionEvent| {
        space
            .pair_index(e.source, e.recipient)
            .ok_or_else(|| SimError::Invalid(format!("event on masked pair {}->{}", e.source, e.recipient)))
    };
    let binomial = |z: &[u64], rng: &mut _| -> Vec<u64> {
        space
            .pairs()
            .iter()
            .zip(z)
            .map(|(p, &zk)| Binomial::new(zk, xi_source[p.source] * xi_recipient[p.recipient]).expect("valid").sample(rng))
            .collect()
    };
    let n = match (input, mode) {
        (ThinInput::Counts(z), _) => {
            if z.len() != space.n_pairs() {
                return Err(SimError::Invalid(format!("{} counts for {} pairs", z.len(), space.n_pairs())));
            }
            // without individual identities every event involves fresh individuals
            binomial(z, &mut rng)
        }
        (ThinInput::Events(events), ThinningMode::PairLevel) => {
            let mut z = vec![0u64; space.n_pairs()];
            for e in events {
                z[pair_of(e)?] += 1;
            }
            binomial(&z, &mut rng)
        }
        (ThinInput::Events(events), ThinningMode::IndividualLevel) => {
            if xi_source != xi_recipient {
                return Err(SimError::Invalid("individual-level thinning needs one probability per stratum".into()));
            }
            let mut sampled: HashMap<u64, bool> = HashMap::new();
            let mut n = vec![0u64; space.n_pairs()];
            for e in events {
                let k = pair_of(e)?;
                let s = *sampled.entry(e.source_id).or_insert_with(|| rng.random::<f64>() < xi_source[e.source]);
                let r = *sampled.entry(e.recipient_id).or_insert_with(|| rng.random::<f64>() < xi_source[e.recipient]);
                if s && r {
                    n[k] += 1;
                }
            }
            n
        }
    };
    Ok(FlowCounts::new(space.clone(), n)?)
}
