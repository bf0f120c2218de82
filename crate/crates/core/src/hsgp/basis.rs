use std::f64::consts::PI;

use super::kernel::{spectral_density, SeKernelParams};
use super::HsgpError;

/// How the approximation box is derived from the input range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainScheme {
    /// Symmetric box around the input centre, half-widths scaled by the factor.
    #[default]
    Centered,
    /// Raw coordinates: `[lo / B, hi * B]` per dimension.
    Multiplicative,
}

/// Box `center ± half_width` per input dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub center: [f64; 2],
    pub half_width: [f64; 2],
}

/// Per-dimension cell edges `[min, max + resolution]`, where resolution is the
/// smallest positive gap between distinct input values (1 for single values).
fn cell_edges(inputs: &[[f64; 2]], d: usize) -> Result<(f64, f64, f64), HsgpError> {
    let mut v: Vec<f64> = inputs.iter().map(|p| p[d]).collect();
    if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
        return Err(HsgpError::DegenerateInputs);
    }
    v.sort_by(f64::total_cmp);
    v.dedup();
    let res = v.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    if v.len() < 2 {
        return Err(HsgpError::DegenerateInputs);
    }
    Ok((v[0], v[v.len() - 1], res))
}

/// Centers inputs and scales the half-widths of their cell range by `factor`.
///
/// Inputs are treated as cells of the grid resolution, so ages `15..=49` span
/// 35 years and factor 1.25 yields half-width 21.875 around 32.
pub fn domain_from_inputs(inputs: &[[f64; 2]], factor: f64) -> Result<Domain, HsgpError> {
    domain_with_scheme(inputs, factor, DomainScheme::Centered)
}

pub fn domain_with_scheme(inputs: &[[f64; 2]], factor: f64, scheme: DomainScheme) -> Result<Domain, HsgpError> {
    if !(factor >= 1.0 && factor.is_finite()) {
        return Err(HsgpError::InvalidFactor(factor));
    }
    let mut center = [0.0; 2];
    let mut half_width = [0.0; 2];
    for d in 0..2 {
        let (lo, hi, res) = cell_edges(inputs, d)?;
        match scheme {
            DomainScheme::Centered => {
                center[d] = 0.5 * (lo + hi);
                half_width[d] = factor * 0.5 * (hi - lo + res);
            }
            DomainScheme::Multiplicative => {
                let (a, b) = (lo / factor, (hi + res) * factor);
                center[d] = 0.5 * (a + b);
                half_width[d] = 0.5 * (b - a);
            }
        }
    }
    Ok(Domain { center, half_width })
}

/// Reduced-rank Laplacian eigenbasis on a 2D box evaluated at fixed inputs.
#[derive(Debug, Clone)]
pub struct HsgpBasis {
    domain: Domain,
    m: [usize; 2],
    k: Vec<[usize; 2]>,
    sqrt_lambda: Vec<[f64; 2]>,
    n: usize,
    phi: Vec<f64>,
}

/// Univariate eigenfunction `j` on `[-b, b]` at centered `x`.
pub fn eigenfunction(x: f64, b: f64, j: usize) -> f64 {
    let s = j as f64 * PI / (2.0 * b);
    (1.0 / b).sqrt() * (s * (x + b)).sin()
}

pub fn eigenvalue(b: f64, j: usize) -> f64 {
    let s = j as f64 * PI / (2.0 * b);
    s * s
}

impl HsgpBasis {
    pub fn build(inputs: &[[f64; 2]], domain: Domain, m1: usize, m2: usize) -> Result<Self, HsgpError> {
        if m1 == 0 || m2 == 0 {
            return Err(HsgpError::EmptyBasis);
        }
        let b = domain.half_width;
        for (i, p) in inputs.iter().enumerate() {
            for d in 0..2 {
                let x = p[d] - domain.center[d];
                if !(x.abs() < b[d]) {
                    return Err(HsgpError::OutsideBox { index: i, point: *p });
                }
            }
        }
        let k: Vec<[usize; 2]> = (1..=m1).flat_map(|j1| (1..=m2).map(move |j2| [j1, j2])).collect();
        let sqrt_lambda = k.iter().map(|kj| [eigenvalue(b[0], kj[0]).sqrt(), eigenvalue(b[1], kj[1]).sqrt()]).collect();
        let n = inputs.len();
        let m = k.len();
        let mut phi = vec![0.0; n * m];
        for (i, p) in inputs.iter().enumerate() {
            let x1 = p[0] - domain.center[0];
            let x2 = p[1] - domain.center[1];
            let e1: Vec<f64> = (1..=m1).map(|j| eigenfunction(x1, b[0], j)).collect();
            let e2: Vec<f64> = (1..=m2).map(|j| eigenfunction(x2, b[1], j)).collect();
            for (j, kj) in k.iter().enumerate() {
                phi[i * m + j] = e1[kj[0] - 1] * e2[kj[1] - 1];
            }
        }
        Ok(Self { domain, m: [m1, m2], k, sqrt_lambda, n, phi })
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn m_per_dim(&self) -> [usize; 2] {
        self.m
    }

    /// Number of basis functions `m1 * m2`.
    pub fn m(&self) -> usize {
        self.k.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.n
    }

    /// Index matrix columns `(j1, j2)`, 1-based.
    pub fn index_matrix(&self) -> &[[usize; 2]] {
        &self.k
    }

    /// Square roots of the eigenvalue pairs: the frequencies fed to the spectral density.
    pub fn sqrt_lambda(&self) -> &[[f64; 2]] {
        &self.sqrt_lambda
    }

    /// Row-major `n x m` eigenfunction matrix.
    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn phi_row(&self, i: usize) -> &[f64] {
        let m = self.m();
        &self.phi[i * m..(i + 1) * m]
    }

    /// `S_theta(sqrt(lambda_j))` for every basis function.
    pub fn spectral_weights(&self, theta: &SeKernelParams) -> Vec<f64> {
        self.sqrt_lambda.iter().map(|w| spectral_density(*w, theta)).collect()
    }

    /// Approximate Gram matrix `Phi diag(S) Phi^T`, row-major.
    pub fn gram(&self, theta: &SeKernelParams) -> Vec<f64> {
        let s = self.spectral_weights(theta);
        let n = self.n;
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            let ri = self.phi_row(i);
            for j in 0..=i {
                let rj = self.phi_row(j);
                let v: f64 = ri.iter().zip(rj).zip(&s).map(|((a, b), w)| a * b * w).sum();
                g[i * n + j] = v;
                g[j * n + i] = v;
            }
        }
        g
    }

    /// `f = Phi (sqrt(S) ⊙ beta)`.
    pub fn draw(&self, theta: &SeKernelParams, beta: &[f64]) -> Result<Vec<f64>, HsgpError> {
        if beta.len() != self.m() {
            return Err(HsgpError::DimensionMismatch { expected: self.m(), got: beta.len() });
        }
        let coef: Vec<f64> = self.spectral_weights(theta).iter().zip(beta).map(|(s, b)| s.sqrt() * b).collect();
        Ok((0..self.n).map(|i| self.phi_row(i).iter().zip(&coef).map(|(p, c)| p * c).sum()).collect())
    }
}

pub fn build_basis(inputs: &[[f64; 2]], domain: Domain, m1: usize, m2: usize) -> Result<HsgpBasis, HsgpError> {
    HsgpBasis::build(inputs, domain, m1, m2)
}

pub fn hsgp_gram(basis: &HsgpBasis, theta: &SeKernelParams) -> Vec<f64> {
    basis.gram(theta)
}

pub fn hsgp_draw(basis: &HsgpBasis, theta: &SeKernelParams, beta: &[f64]) -> Result<Vec<f64>, HsgpError> {
    basis.draw(theta, beta)
}

/// `max |K_hsgp - K_exact| / sigma2` over all input pairs.
pub fn gram_error(basis: &HsgpBasis, inputs: &[[f64; 2]], theta: &SeKernelParams) -> f64 {
    let approx = basis.gram(theta);
    let exact = super::kernel::exact_gram(inputs, theta);
    approx.iter().zip(&exact).map(|(a, e)| (a - e).abs()).fold(0.0, f64::max) / theta.sigma2
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_box_first_eigenpair() {
        assert!((eigenvalue(1.0, 1) - (PI / 2.0).powi(2)).abs() < 1e-15);
        assert!((eigenvalue(1.0, 1) - 2.4674).abs() < 1e-4);
        assert!((eigenfunction(0.0, 1.0, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn index_matrix_enumerates_first_dimension_outermost() {
        let inputs = [[0.0, 0.0], [1.0, 1.0]];
        let dom = Domain { center: [0.5, 0.5], half_width: [2.0, 2.0] };
        let b = HsgpBasis::build(&inputs, dom, 3, 4).unwrap();
        let row1: Vec<usize> = b.index_matrix().iter().map(|k| k[0]).collect();
        let row2: Vec<usize> = b.index_matrix().iter().map(|k| k[1]).collect();
        assert_eq!(row1, [1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3]);
        assert_eq!(row2, [1, 2, 3, 4, 1, 2, 3, 4, 1, 2, 3, 4]);
        assert_eq!(b.phi().len(), 2 * 12);
    }

    #[test]
    fn domain_rules() {
        let ages: Vec<[f64; 2]> = (15..=49).map(|a| [a as f64, a as f64]).collect();
        let d = domain_from_inputs(&ages, 1.25).unwrap();
        assert_eq!(d.center, [32.0, 32.0]);
        assert!((d.half_width[0] - 21.875).abs() < 1e-12);
        let d1 = domain_from_inputs(&ages, 1.0).unwrap();
        let d2 = domain_from_inputs(&ages, 2.0).unwrap();
        assert!((d1.half_width[0] - 17.5).abs() < 1e-12);
        assert!((d2.half_width[1] - 2.0 * d1.half_width[1]).abs() < 1e-12);
        assert!(HsgpBasis::build(&ages, d1, 5, 5).is_ok());
        let raw = domain_with_scheme(&ages, 1.25, DomainScheme::Multiplicative).unwrap();
        assert!((raw.center[0] - raw.half_width[0] - 12.0).abs() < 1e-12);
        assert!((raw.center[0] + raw.half_width[0] - 62.5).abs() < 1e-12);
        assert!(matches!(domain_from_inputs(&[[1.0, 2.0], [1.0, 3.0]], 1.2), Err(HsgpError::DegenerateInputs)));
        assert!(matches!(domain_from_inputs(&ages, 0.9), Err(HsgpError::InvalidFactor(_))));
    }

    #[test]
    fn rejects_points_outside_box() {
        let dom = Domain { center: [0.0, 0.0], half_width: [1.0, 1.0] };
        assert!(matches!(HsgpBasis::build(&[[1.0, 0.0]], dom, 2, 2), Err(HsgpError::OutsideBox { index: 0, .. })));
        assert!(matches!(HsgpBasis::build(&[[0.0, 0.0]], dom, 0, 2), Err(HsgpError::EmptyBasis)));
    }

    #[test]
    fn draw_checks_dimension_and_is_zero_at_zero() {
        let dom = Domain { center: [0.0, 0.0], half_width: [2.0, 2.0] };
        let b = HsgpBasis::build(&[[0.1, 0.2], [0.5, -0.3]], dom, 3, 3).unwrap();
        let t = SeKernelParams::new(1.0, 1.0, 1.0).unwrap();
        assert_eq!(b.draw(&t, &[0.0; 9]).unwrap(), vec![0.0, 0.0]);
        assert!(b.draw(&t, &[0.0; 8]).is_err());
        let zero = SeKernelParams { sigma2: 0.0, l1: 1.0, l2: 1.0 };
        assert!(b.gram(&zero).iter().all(|v| *v == 0.0));
    }
}
