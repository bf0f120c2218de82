//! Dormand–Prince 5(4) integrator with PI step-size control.

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { rtol: 1e-8, atol: 1e-10 }
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// fifth-order weights minus embedded fourth-order weights
const E: [f64; 7] = [
    35.0 / 384.0 - 5179.0 / 57600.0,
    0.0,
    500.0 / 1113.0 - 7571.0 / 16695.0,
    125.0 / 192.0 - 393.0 / 640.0,
    -2187.0 / 6784.0 + 92097.0 / 339200.0,
    11.0 / 84.0 - 187.0 / 2100.0,
    -1.0 / 40.0,
];

/// Integrates `dy/dt = f(t, y)` from `t0` and returns the state at each of
/// the ascending `outputs` (all `>= t0`).
pub fn solve<F>(f: F, t0: f64, y0: &[f64], outputs: &[f64], tol: Tolerance) -> Result<Vec<Vec<f64>>, SimError>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    f(t, &y, &mut k[0]);
    let scale = |a: f64, b: f64| tol.atol + tol.rtol * a.abs().max(b.abs());
    let norm = |v: &[f64], y: &[f64]| (v.iter().zip(y).map(|(v, y)| (v / scale(*y, *y)).powi(2)).sum::<f64>() / n as f64).sqrt();
    let end = outputs.last().copied().unwrap_or(t0);
    let mut h = {
        let (d0, d1) = (norm(&y, &y), norm(&k[0], &y));
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0.min((end - t0).max(1e-12))
    };
    let mut err_prev: f64 = 1e-4;
    let mut rejected = false;
    let mut out = Vec::with_capacity(outputs.len());
    for &target in outputs {
        if target < t {
            return Err(SimError::Invalid(format!("output time {target} precedes {t}")));
        }
        while t < target {
            let last = h >= target - t;
            let step = if last { target - t } else { h };
            if step < 1e-14 * t.abs().max(1.0) {
                return Err(SimError::StepUnderflow { t });
            }
            for s in 1..7 {
                for i in 0..n {
                    tmp[i] = y[i] + step * (0..s).map(|j| A[s][j] * k[j][i]).sum::<f64>();
                }
                f(t + C[s] * step, &tmp, &mut k[s]);
            }
            // stage 7 was evaluated at the fifth-order solution
            y_new.copy_from_slice(&tmp);
            let err_vec: Vec<f64> = (0..n).map(|i| step * (0..7).map(|j| E[j] * k[j][i]).sum::<f64>()).collect();
            let err = (err_vec.iter().zip(y.iter().zip(&y_new)).map(|(e, (a, b))| (e / scale(*a, *b)).powi(2)).sum::<f64>()
                / n as f64)
                .sqrt();
            if !err.is_finite() {
                return Err(SimError::StepUnderflow { t });
            }
            if err <= 1.0 {
                t = if last { target } else { t + step };
                y.copy_from_slice(&y_new);
                let k7 = k[6].clone();
                k[0].copy_from_slice(&k7);
                let fac = 0.9 * err.max(1e-10).powf(-0.17) * err_prev.powf(0.04);
                let fac = if rejected { fac.min(1.0) } else { fac };
                // a step shortened to hit an output time says little about h
                if !last {
                    h = step * fac.clamp(0.2, 10.0);
                } else if fac < 1.0 {
                    h *= fac.max(0.2);
                }
                err_prev = err.max(1e-4);
                rejected = false;
            } else {
                h = step * (0.9 * err.powf(-0.2)).max(0.2);
                rejected = true;
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}
