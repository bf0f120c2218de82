use statrs::distribution::{ContinuousCDF, Gamma};

use super::InferenceError;

/// Inverse-Gamma `(shape, scale)` whose central `mass` interval is `[lower, upper]`.
///
/// If `Y ~ Gamma(α, 1)` then `β / Y` is Inverse-Gamma, so the ratio of the
/// interval ends depends on α alone and is found by bisection in `log α`.
pub fn invgamma_from_quantiles(lower: f64, upper: f64, mass: f64) -> Result<(f64, f64), InferenceError> {
    if !(lower > 0.0 && upper > lower && upper.is_finite()) {
        return Err(InferenceError::InvalidPrior(format!("need 0 < lower < upper, got [{lower}, {upper}]")));
    }
    if !(mass > 0.0 && mass < 1.0) {
        return Err(InferenceError::InvalidPrior(format!("mass {mass} outside (0,1)")));
    }
    let tail = 0.5 * (1.0 - mass);
    let ends = |alpha: f64| {
        let g = Gamma::new(alpha, 1.0).expect("positive shape");
        (g.inverse_cdf(1.0 - tail), g.inverse_cdf(tail))
    };
    // log of (upper / lower) implied by α; decreasing in α
    let log_ratio = |log_a: f64| {
        let (hi, lo) = ends(log_a.exp());
        hi.ln() - lo.ln()
    };
    let target = upper.ln() - lower.ln();
    let (mut a, mut b) = (-5.0_f64, 16.0_f64);
    if !(log_ratio(a) > target && log_ratio(b) < target) {
        return Err(InferenceError::InvalidPrior(format!("cannot bracket an Inverse-Gamma for [{lower}, {upper}]")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if log_ratio(mid) > target {
            a = mid;
        } else {
            b = mid;
        }
        if b - a < 1e-13 {
            break;
        }
    }
    let alpha = (0.5 * (a + b)).exp();
    let (hi, _) = ends(alpha);
    Ok((alpha, lower * hi))
}

/// CDF of Inverse-Gamma `(shape, scale)`.
pub fn invgamma_cdf(x: f64, shape: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    statrs::function::gamma::gamma_ur(shape, scale / x)
}
