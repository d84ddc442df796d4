//! Expected covariance `Σ = E[π (1, z)(1, z)ᵀ]` and its closed-form inverse.
//!
//! `Σ` has `α_0` in the corner, `α_1` on the rest of the first row, first
//! column and diagonal, and `α_2` elsewhere. Its inverse has the same
//! pattern with `σ_0, σ_1, σ_2, σ_3` in place of the α's, scaled by `1/c_d`.

use crate::error::Result;
use crate::linalg::Matrix;
use crate::theory::alpha::alpha;

/// `σ_0..σ_3` and the normalizer `c_d` for one `(d, ν)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaSet {
    pub d: usize,
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub sigma0: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma3: f64,
    pub c_d: f64,
}

impl SigmaSet {
    pub fn from_alphas(d: usize, alpha0: f64, alpha1: f64, alpha2: f64) -> Self {
        let df = d as f64;
        let gap = alpha1 - alpha2;
        Self {
            d,
            alpha0,
            alpha1,
            alpha2,
            sigma0: (df - 1.0) * alpha2 + alpha1,
            sigma1: -alpha1,
            sigma2: ((df - 2.0) * alpha0 * alpha2 - (df - 1.0) * alpha1 * alpha1 + alpha0 * alpha1)
                / gap,
            sigma3: (alpha1 * alpha1 - alpha0 * alpha2) / gap,
            c_d: (df - 1.0) * alpha0 * alpha2 - df * alpha1 * alpha1 + alpha0 * alpha1,
        }
    }

    /// Residuals of the five identities linking α's and σ's, in order:
    ///
    /// 1. `σ_0 α_1 + σ_1 α_1 + (d−1) σ_1 α_2 = 0`
    /// 2. `σ_1 α_1 + σ_2 α_1 + (d−1) σ_3 α_2 = c_d`
    /// 3. `σ_1 α_1 + σ_2 α_2 + σ_3 α_1 + (d−2) σ_3 α_2 = 0`
    /// 4. `σ_1 α_0 + σ_2 α_1 + (d−1) σ_3 α_1 = 0`
    /// 5. `σ_0 α_0 + d σ_1 α_1 = c_d`
    pub fn identity_residuals(&self) -> [f64; 5] {
        let d = self.d as f64;
        let (a0, a1, a2) = (self.alpha0, self.alpha1, self.alpha2);
        let (s0, s1, s2, s3) = (self.sigma0, self.sigma1, self.sigma2, self.sigma3);
        [
            s0 * a1 + s1 * a1 + (d - 1.0) * s1 * a2,
            s1 * a1 + s2 * a1 + (d - 1.0) * s3 * a2 - self.c_d,
            s1 * a1 + s2 * a2 + s3 * a1 + (d - 2.0) * s3 * a2,
            s1 * a0 + s2 * a1 + (d - 1.0) * s3 * a1,
            s0 * a0 + d * s1 * a1 - self.c_d,
        ]
    }

    /// Spectral norm of `Σ⁻¹`, from its block structure: eigenvalue
    /// `(σ_2 − σ_3)/c_d` on vectors `(0, v)` with `v ⊥ 1`, plus the two
    /// eigenvalues of the 2×2 restriction to `span{e_0, (0, 1)}`.
    pub fn inverse_operator_norm(&self) -> f64 {
        let d = self.d as f64;
        let a = self.sigma0;
        let b = d.sqrt() * self.sigma1;
        let c = self.sigma2 + (d - 1.0) * self.sigma3;
        let mid = 0.5 * (a + c);
        let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        let candidates = [self.sigma2 - self.sigma3, mid + rad, mid - rad];
        candidates.iter().map(|v| v.abs()).fold(0.0, f64::max) / self.c_d
    }
}

/// σ coefficients and `c_d` for `d >= 2` superpixels at bandwidth `ν`.
pub fn sigma_set(d: usize, nu: f64) -> Result<SigmaSet> {
    Ok(SigmaSet::from_alphas(
        d,
        alpha(d, 0, nu)?,
        alpha(d, 1, nu)?,
        alpha(d, 2, nu)?,
    ))
}

/// A `(d+1) x (d+1)` symmetric matrix indexed intercept-first.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix(Matrix);

impl CovarianceMatrix {
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }
}

fn patterned(d: usize, corner: f64, border: f64, diag: f64, off: f64) -> CovarianceMatrix {
    CovarianceMatrix(Matrix::from_fn(d + 1, d + 1, |j, k| match (j, k) {
        (0, 0) => corner,
        (0, _) | (_, 0) => border,
        _ if j == k => diag,
        _ => off,
    }))
}

/// `Σ` built from `α_0, α_1, α_2`.
pub fn sigma_matrix(d: usize, nu: f64) -> Result<CovarianceMatrix> {
    let s = sigma_set(d, nu)?;
    Ok(patterned(d, s.alpha0, s.alpha1, s.alpha1, s.alpha2))
}

/// Closed-form `Σ⁻¹`.
pub fn sigma_inverse(d: usize, nu: f64) -> Result<CovarianceMatrix> {
    Ok(sigma_inverse_from(&sigma_set(d, nu)?))
}

pub fn sigma_inverse_from(s: &SigmaSet) -> CovarianceMatrix {
    let c = s.c_d;
    patterned(s.d, s.sigma0 / c, s.sigma1 / c, s.sigma2 / c, s.sigma3 / c)
}

#[cfg(test)]
mod tests {
    use super::*;

    const NUS: [f64; 5] = [0.25, 0.5, 1.0, 5.0, 100.0];

    #[test]
    fn large_bandwidth_limits() {
        for d in [2usize, 3, 10, 50] {
            let s = sigma_set(d, f64::INFINITY).unwrap();
            assert!((s.sigma0 - (d as f64 + 1.0) / 4.0).abs() < 1e-14);
            assert!((s.sigma1 + 0.5).abs() < 1e-15);
            assert!((s.sigma2 - 1.0).abs() < 1e-14);
            assert!(s.sigma3.abs() < 1e-14);
            assert!((s.c_d - 0.25).abs() < 1e-14);
            let near = sigma_set(d, 1e4).unwrap();
            assert!((near.c_d - 0.25).abs() < 1e-6);
        }
    }

    #[test]
    fn useful_equalities_hold() {
        for d in 2..=64 {
            for nu in NUS {
                let s = sigma_set(d, nu).unwrap();
                for (i, r) in s.identity_residuals().iter().enumerate() {
                    assert!(r.abs() <= 1e-12, "identity {} d={d} nu={nu}: {r}", i + 1);
                }
            }
        }
    }

    #[test]
    fn perturbed_sigma2_breaks_identities() {
        let mut s = sigma_set(10, 0.25).unwrap();
        s.sigma2 += 1e-6;
        assert!(s.identity_residuals().iter().any(|r| r.abs() > 1e-12));
    }

    #[test]
    fn coefficient_bounds() {
        for d in 2..=64 {
            for nu in NUS {
                let s = sigma_set(d, nu).unwrap();
                let df = d as f64;
                let e_half = (1.0 / (2.0 * nu * nu)).exp();
                assert!(s.c_d >= (-1.0 / (nu * nu)).exp() / 4.0 && s.c_d <= 0.25);
                assert!(s.sigma1.abs() <= 0.5);
                assert!(s.sigma2.abs() <= 2.0 * e_half);
                assert!(s.sigma3.abs() <= 2.0 * e_half / df);
                assert!(s.sigma0.abs() <= 3.0 * df / 4.0);
                let bound = 8.0 * df * (1.0 / (nu * nu)).exp();
                assert!(s.inverse_operator_norm() <= bound);
            }
        }
    }

    #[test]
    fn product_is_identity() {
        for d in [2, 7, 30, 50] {
            for nu in [0.25, 1.0, 10.0] {
                let p = sigma_matrix(d, nu)
                    .unwrap()
                    .matrix()
                    .mul(sigma_inverse(d, nu).unwrap().matrix());
                assert!(p.max_abs_diff(&Matrix::identity(d + 1)) <= 1e-10);
            }
        }
    }

    #[test]
    fn sigma_pattern() {
        let m = sigma_matrix(3, 0.4).unwrap();
        let s = sigma_set(3, 0.4).unwrap();
        let m = m.matrix();
        assert_eq!(m[(0, 0)], s.alpha0);
        assert_eq!(m[(0, 2)], s.alpha1);
        assert_eq!(m[(2, 0)], s.alpha1);
        assert_eq!(m[(2, 2)], s.alpha1);
        assert_eq!(m[(1, 3)], s.alpha2);
        assert!(m.is_symmetric());
    }

    #[test]
    fn c_d_for_two_superpixels_at_infinity() {
        // (d-1) a0 a2 - d a1^2 + a0 a1 with a_p = 2^-p.
        let s = sigma_set(2, f64::INFINITY).unwrap();
        assert!((s.c_d - (0.25 - 2.0 * 0.25 + 0.5)).abs() < 1e-15);
    }
}
