//! Ground-truth generators: structured SIT epidemics, multinomial and GP
//! flow simulators, and observation thinning.

pub mod gp;
pub mod multinomial;
pub mod rk45;
pub mod sit;
pub mod thinning;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::strata::{FlowCounts, FlowProportions, StrataError, StrataSpace};

pub use gp::{draw_gp_surface, simulate_gp_flows, GpSimParams, GpSurfaceParams};
pub use multinomial::simulate_multinomial;
pub use rk45::Tolerance;
pub use sit::{simulate_sit_gillespie, simulate_sit_ode, GillespieOptions, SitGroup, SitModel, SitRate, TimeSpan};
pub use thinning::{thin_observations, ThinInput, ThinningMode};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("compartment {compartment} of `{stratum}` fell to {value}")]
    NegativeCompartment { stratum: String, compartment: &'static str, value: f64 },
    #[error("event budget of {limit} exceeded at t = {t}")]
    EventBudget { limit: usize, t: f64 },
    #[error("Gram matrix not factorizable after {attempts} jitter escalations")]
    GramNotFactorizable { attempts: usize },
    #[error("invalid simulation input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Strata(#[from] StrataError),
}

/// One transmission with the individuals involved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransmissionEvent {
    pub time: f64,
    pub source_id: u64,
    pub recipient_id: u64,
    pub source: usize,
    pub recipient: usize,
}

/// Compartments `[S, I, T]` of every stratum at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub compartments: Vec<[f64; 3]>,
}

impl TrajectoryPoint {
    /// `(I + T) / N` over all strata.
    pub fn prevalence(&self) -> f64 {
        let (inf, tot) = self.compartments.iter().fold((0.0, 0.0), |(i, n), c| (i + c[1] + c[2], n + c[0] + c[1] + c[2]));
        inf / tot
    }

    pub fn population(&self) -> f64 {
        self.compartments.iter().map(|c| c[0] + c[1] + c[2]).sum()
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub space: Arc<StrataSpace>,
    pub trajectory: Vec<TrajectoryPoint>,
    /// True flows per pair: cumulative transmissions in the study window, or
    /// drawn counts for the flow simulators.
    pub z: Vec<f64>,
    pub pi: FlowProportions,
    /// Expected intensities, when the simulator has them.
    pub intensity: Option<Vec<f64>>,
    /// Individual events (stochastic epidemic only).
    pub events: Vec<TransmissionEvent>,
    pub observed: Option<FlowCounts>,
}

impl SimOutput {
    /// Flows as integer counts; fractional values are rounded.
    pub fn z_counts(&self) -> Vec<u64> {
        self.z.iter().map(|v| v.round().max(0.0) as u64).collect()
    }
}

pub(crate) fn check_probabilities(xi: &[f64], a: usize, label: &str) -> Result<(), SimError> {
    if xi.len() != a {
        return Err(SimError::Invalid(format!("{label}: {} probabilities for {a} strata", xi.len())));
    }
    if let Some(v) = xi.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(SimError::Invalid(format!("{label}: probability {v} outside [0,1]")));
    }
    Ok(())
}
