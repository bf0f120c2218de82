use rand_distr::{Binomial, Distribution, Poisson};

use super::{check_probabilities, SimError, SimOutput};
use crate::rng::task_rng;
use crate::strata::{FlowCounts, FlowProportions};

/// Draws `z+ ~ Poisson(target / mean(ξ))`, `z ~ Multinomial(z+, π₀)` and
/// observed counts by Binomial thinning with `ξ_a ξ_b`.
pub fn simulate_multinomial(pi0: &FlowProportions, xi: &[f64], target_n: f64, seed: u64) -> Result<SimOutput, SimError> {
    let space = pi0.space().clone();
    check_probabilities(xi, space.len(), "xi")?;
    let xi_bar = xi.iter().sum::<f64>() / xi.len() as f64;
    if !(xi_bar > 0.0 && target_n > 0.0 && target_n.is_finite()) {
        return Err(SimError::Invalid(format!("need positive mean probability and target, got {xi_bar} and {target_n}")));
    }
    let mut rng = task_rng(seed, &[0]);
    let z_total = Poisson::new(target_n / xi_bar).expect("positive mean").sample(&mut rng) as u64;
    let mut z = vec![0u64; space.n_pairs()];
    let (mut left, mut mass) = (z_total, 1.0);
    for (k, p) in pi0.values().iter().enumerate() {
        if left == 0 {
            break;
        }
        let prob = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
        let draw = if k + 1 == z.len() { left } else { Binomial::new(left, prob).expect("valid").sample(&mut rng) };
        z[k] = draw;
        left -= draw;
        mass -= p;
    }
    let n: Vec<u64> = space
        .pairs()
        .iter()
        .zip(&z)
        .map(|(p, &zk)| Binomial::new(zk, xi[p.source] * xi[p.recipient]).expect("valid").sample(&mut rng))
        .collect();
    Ok(SimOutput {
        observed: Some(FlowCounts::new(space.clone(), n)?),
        z: z.iter().map(|&v| v as f64).collect(),
        pi: pi0.clone(),
        space,
        trajectory: Vec::new(),
        intensity: None,
        events: Vec::new(),
    })
}
