//! The sample-size bound behind the concentration theorem, and the
//! combinatorial identity used in its proof.

use crate::error::{Error, Result};
use crate::lime::check_bandwidth;

/// Smallest `n` for which the concentration bound guarantees
/// `‖β̂_n − β^f‖ ≤ ε` with probability at least `1 − η`:
///
/// `⌈max(2^15 d^4 e^{2/ν²}, 2^21 d^7 max(M, M²) e^{4/ν²} / ε²) · log(8d/η)⌉`.
///
/// The constants are reported as stated; they are not claimed to be tight.
pub fn min_sample_size(m: f64, eps: f64, eta: f64, d: usize, nu: f64) -> Result<u128> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::InvalidParameter(format!("model bound must be positive, got {m}")));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {eps}")));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::InvalidParameter(format!("eta must lie in (0, 1), got {eta}")));
    }
    if d < 2 {
        return Err(Error::InvalidParameter(format!("need d >= 2, got {d}")));
    }
    check_bandwidth(nu)?;
    let df = d as f64;
    let inv_nu2 = 1.0 / (nu * nu);
    let first = 2f64.powi(15) * df.powi(4) * (2.0 * inv_nu2).exp();
    let second = 2f64.powi(21) * df.powi(7) * m.max(m * m) * (4.0 * inv_nu2).exp() / (eps * eps);
    let n = (first.max(second) * (8.0 * df / eta).ln()).ceil();
    if !n.is_finite() || n >= u128::MAX as f64 {
        return Err(Error::Overflow(format!(
            "sample-size bound {n:e} does not fit in an unsigned 128-bit integer"
        )));
    }
    Ok(n as u128)
}

/// `Σ_{j<k} C(d,j) C(d,k) (j−k)²` in exact integer arithmetic.
pub fn combinatorial_v(d: u32) -> Result<u128> {
    if d < 1 {
        return Err(Error::InvalidParameter("need d >= 1".into()));
    }
    let overflow = || Error::Overflow(format!("combinatorial sum for d = {d} exceeds 128 bits"));
    let mut binom = vec![1u128; d as usize + 1];
    for k in 1..=d as usize {
        binom[k] = binom[k - 1]
            .checked_mul((d as usize - k + 1) as u128)
            .ok_or_else(overflow)?
            / k as u128;
    }
    let mut total = 0u128;
    for j in 0..=d as usize {
        for k in j + 1..=d as usize {
            let gap = ((k - j) * (k - j)) as u128;
            let term = binom[j]
                .checked_mul(binom[k])
                .and_then(|t| t.checked_mul(gap))
                .ok_or_else(overflow)?;
            total = total.checked_add(term).ok_or_else(overflow)?;
        }
    }
    Ok(total)
}
