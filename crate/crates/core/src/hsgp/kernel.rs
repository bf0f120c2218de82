use std::f64::consts::PI;

use super::HsgpError;

/// Squared-exponential kernel parameters for 2D inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeKernelParams {
    pub sigma2: f64,
    pub l1: f64,
    pub l2: f64,
}

impl SeKernelParams {
    pub fn new(sigma2: f64, l1: f64, l2: f64) -> Result<Self, HsgpError> {
        if [sigma2, l1, l2].iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(Self { sigma2, l1, l2 })
        } else {
            Err(HsgpError::InvalidKernel { sigma2, l1, l2 })
        }
    }

    /// From the marginal standard deviation.
    pub fn from_sd(sigma: f64, l1: f64, l2: f64) -> Result<Self, HsgpError> {
        Self::new(sigma * sigma, l1, l2)
    }
}

pub fn se_kernel(p1: [f64; 2], p2: [f64; 2], theta: &SeKernelParams) -> f64 {
    let d1 = p1[0] - p2[0];
    let d2 = p1[1] - p2[1];
    theta.sigma2 * (-(d1 * d1 / (2.0 * theta.l1 * theta.l1) + d2 * d2 / (2.0 * theta.l2 * theta.l2))).exp()
}

pub fn spectral_density(omega: [f64; 2], theta: &SeKernelParams) -> f64 {
    let e = theta.l1 * theta.l1 * omega[0] * omega[0] + theta.l2 * theta.l2 * omega[1] * omega[1];
    2.0 * PI * theta.sigma2 * theta.l1 * theta.l2 * (-0.5 * e).exp()
}

/// Exact Gram matrix, row-major `n x n`.
pub fn exact_gram(inputs: &[[f64; 2]], theta: &SeKernelParams) -> Vec<f64> {
    let n = inputs.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = se_kernel(inputs[i], inputs[j], theta);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}
