//! The α coefficients `α_{p,q} = E[π z_1⋯z_p (1 − z_{p+1})⋯(1 − z_{p+q})]`.
//!
//! Conditioning on the number `s` of deactivated superpixels gives
//! `α_{p,q} = 2^{-d} Σ_s C(d−p−q, s−q) ψ(s/d)`. The binomial masses are
//! produced by term ratios starting from the central coefficient and then
//! normalized, so no large binomial is ever formed and `d` in the thousands
//! stays finite.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::image::MaskVector;
use crate::lime::{check_bandwidth, psi_unchecked};

/// Largest `d` accepted by the enumeration oracles.
pub const MAX_ENUMERATION_D: usize = 20;

/// Probability masses of `Binomial(m, 1/2)`.
pub fn binomial_half_pmf(m: usize) -> Vec<f64> {
    let mut terms = vec![0.0; m + 1];
    let center = m / 2;
    terms[center] = 1.0;
    for k in center..m {
        terms[k + 1] = terms[k] * (m - k) as f64 / (k + 1) as f64;
    }
    for k in (1..=center).rev() {
        terms[k - 1] = terms[k] * k as f64 / (m - k + 1) as f64;
    }
    let total: f64 = terms.iter().sum();
    terms.iter_mut().for_each(|t| *t /= total);
    terms
}

fn check_d(d: usize) -> Result<()> {
    if d < 2 {
        return Err(Error::InvalidParameter(format!("need d >= 2, got {d}")));
    }
    Ok(())
}

/// Generalized coefficient `α_{p,q}`; requires `p + q <= d`.
pub fn alpha_gen(d: usize, p: usize, q: usize, nu: f64) -> Result<f64> {
    check_d(d)?;
    check_bandwidth(nu)?;
    if p + q > d {
        return Err(Error::InvalidParameter(format!(
            "alpha_{{{p},{q}}} needs p + q <= d = {d}"
        )));
    }
    let m = d - p - q;
    // C(m, s - q) / 2^d = 2^{-(p+q)} * pmf_m(s - q); only s in q..=q+m contributes.
    let pmf = binomial_half_pmf(m);
    let sum: f64 = pmf
        .iter()
        .enumerate()
        .map(|(k, mass)| mass * psi_unchecked((k + q) as f64 / d as f64, nu))
        .sum();
    Ok(sum * 0.5f64.powi((p + q) as i32))
}

/// `α_p = α_{p,0}`.
pub fn alpha(d: usize, p: usize, nu: f64) -> Result<f64> {
    alpha_gen(d, p, 0, nu)
}

/// `α_{p,q}` by averaging over all `2^d` masks; `d <= 20`.
pub fn alpha_bruteforce(d: usize, p: usize, q: usize, nu: f64) -> Result<f64> {
    if d > MAX_ENUMERATION_D {
        return Err(Error::EnumerationTooLarge {
            d,
            limit: MAX_ENUMERATION_D,
        });
    }
    check_d(d)?;
    check_bandwidth(nu)?;
    if p + q > d {
        return Err(Error::InvalidParameter(format!(
            "alpha_{{{p},{q}}} needs p + q <= d = {d}"
        )));
    }
    let mut total = 0.0;
    for code in 0..1u64 << d {
        let z = MaskVector::from_code(code, d);
        let on = (0..p).all(|j| z.get(j));
        let off = (p..p + q).all(|j| !z.get(j));
        if on && off {
            total += psi_unchecked(z.count_zeros() as f64 / d as f64, nu);
        }
    }
    Ok(total / (1u64 << d) as f64)
}

/// A set of α coefficients for fixed `(d, ν)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaTable {
    d: usize,
    nu: f64,
    values: BTreeMap<(usize, usize), f64>,
}

impl AlphaTable {
    pub fn new(d: usize, nu: f64, pairs: &[(usize, usize)]) -> Result<Self> {
        let values = pairs
            .iter()
            .map(|&(p, q)| Ok(((p, q), alpha_gen(d, p, q, nu)?)))
            .collect::<Result<_>>()?;
        Ok(Self { d, nu, values })
    }

    /// `α_0, α_1, α_2`, the entries of the expected covariance matrix.
    pub fn first_three(d: usize, nu: f64) -> Result<Self> {
        Self::new(d, nu, &[(0, 0), (1, 0), (2, 0)])
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn get(&self, p: usize, q: usize) -> Option<f64> {
        self.values.get(&(p, q)).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.values.iter().map(|(k, v)| (*k, *v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const NUS: [f64; 5] = [0.25, 0.5, 1.0, 5.0, 100.0];

    fn exact_binomial(n: u32, k: u32) -> u128 {
        (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
    }

    #[test]
    fn pmf_matches_exact_binomials() {
        for m in 0..=25u32 {
            let pmf = binomial_half_pmf(m as usize);
            for k in 0..=m {
                let exact = exact_binomial(m, k) as f64 / (1u64 << m) as f64;
                assert!((pmf[k as usize] - exact).abs() <= 1e-15 * exact.max(1e-300) + 1e-300);
            }
        }
    }

    #[test]
    fn alpha_matches_exact_rational_masses() {
        for d in 2..=25usize {
            for p in 0..=d {
                let m = (d - p) as u32;
                let exact: f64 = (0..=m)
                    .map(|s| {
                        exact_binomial(m, s) as f64 / (1u64 << d) as f64
                            * psi_unchecked(s as f64 / d as f64, 0.5)
                    })
                    .sum();
                let got = alpha(d, p, 0.5).unwrap();
                assert!((got - exact).abs() <= 1e-14 * exact, "d={d} p={p}");
            }
        }
    }

    #[test]
    fn alpha_is_finite_for_large_d() {
        let a = alpha(1000, 1, 0.25).unwrap();
        assert!(a.is_finite() && a > 0.0);
        let last = alpha(1000, 1000, 0.25).unwrap();
        assert!(last > 0.0 && (last - 0.5f64.powi(1000)).abs() <= 1e-12 * last);
    }

    #[test]
    fn alpha_spot_values() {
        let nu = 0.25;
        let expected = (1.0 + psi_unchecked(0.5, nu)) / 4.0;
        assert!((alpha(2, 1, nu).unwrap() - expected).abs() < 1e-15);
        assert!((alpha(2, 1, nu).unwrap() - 0.375860).abs() < 1e-6);
        assert!((alpha(2, 1, f64::INFINITY).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(alpha_gen(5, 2, 0, 0.3).unwrap(), alpha(5, 2, 0.3).unwrap());
        assert!((alpha_gen(2, 0, 1, f64::INFINITY).unwrap() - 0.5).abs() < 1e-15);
        assert!(alpha_gen(4, 3, 2, 1.0).is_err());
        assert!(alpha(1, 0, 1.0).is_err());
    }

    #[test]
    fn bruteforce_special_cases() {
        for d in 2..=8 {
            for nu in NUS {
                assert!((alpha_bruteforce(d, 0, 0, nu).unwrap() - alpha(d, 0, nu).unwrap()).abs() < 1e-14);
                assert!((alpha_bruteforce(d, d, 0, nu).unwrap() - 0.5f64.powi(d as i32)).abs() < 1e-16);
            }
            for p in 0..=d {
                for q in 0..=d - p {
                    let v = alpha_bruteforce(d, p, q, f64::INFINITY).unwrap();
                    assert!((v - 0.5f64.powi((p + q) as i32)).abs() < 1e-15);
                }
            }
        }
        assert!(matches!(
            alpha_bruteforce(21, 0, 0, 1.0),
            Err(Error::EnumerationTooLarge { .. })
        ));
    }

    #[test]
    fn closed_form_matches_enumeration() {
        for d in 2..=10 {
            for nu in NUS {
                for p in 0..=d {
                    for q in 0..=d - p {
                        let a = alpha_gen(d, p, q, nu).unwrap();
                        let b = alpha_bruteforce(d, p, q, nu).unwrap();
                        assert!((a - b).abs() <= 1e-12, "d={d} p={p} q={q} nu={nu}");
                    }
                }
            }
        }
    }

    #[test]
    fn alpha_bounds_and_monotonicity() {
        for d in [2, 5, 17, 64] {
            for nu in NUS {
                let floor = (-1.0 / (2.0 * nu * nu)).exp();
                let values: Vec<f64> = (0..=d).map(|p| alpha(d, p, nu).unwrap()).collect();
                for (p, &a) in values.iter().enumerate() {
                    let scale = 0.5f64.powi(p as i32);
                    assert!(a <= scale * (1.0 + 1e-12) && a >= floor * scale * (1.0 - 1e-12));
                }
                for p in 0..d {
                    let diff = values[p] - values[p + 1];
                    let scale = 0.5f64.powi(p as i32 + 1);
                    assert!(diff > 0.0);
                    assert!(diff >= floor * scale * (1.0 - 1e-9) && diff <= scale * (1.0 + 1e-9));
                }
            }
        }
    }

    #[test]
    fn table_lookup() {
        let t = AlphaTable::new(6, 1.0, &[(0, 0), (2, 1)]).unwrap();
        assert_eq!(t.get(2, 1), Some(alpha_gen(6, 2, 1, 1.0).unwrap()));
        assert_eq!(t.get(3, 0), None);
        assert!(AlphaTable::new(3, 1.0, &[(3, 1)]).is_err());
    }
}
