//! Limit explanations `β^f`: from moments, for shape detectors, for linear
//! models, and in the large-bandwidth limit.

use crate::error::{Error, Result};
use crate::image::{Image, SuperpixelPartition};
use crate::lime::{check_bandwidth, draw_masks, ExplanationVector, Provenance};
use crate::models::{BlackBoxModel, LinearModel, ShapeDetector};
use crate::theory::alpha::alpha_gen;
use crate::theory::moments::{all_masks, conditional_means, MomentSource, MomentVector};
use crate::theory::sigma::{sigma_inverse_from, sigma_set, SigmaSet};

fn check_d(d: usize) -> Result<()> {
    if d < 2 {
        return Err(Error::InvalidParameter(format!("need d >= 2 superpixels, got {d}")));
    }
    Ok(())
}

/// `β^f = Σ⁻¹ Γ` written out with the σ coefficients.
pub fn beta_from_moments(gamma: &MomentVector, d: usize, nu: f64) -> Result<ExplanationVector> {
    check_d(d)?;
    check_bandwidth(nu)?;
    if gamma.d() != d {
        return Err(Error::DimensionMismatch(format!(
            "moment vector has {} entries, expected d = {d}",
            gamma.d()
        )));
    }
    let s = sigma_set(d, nu)?;
    Ok(beta_with_sigmas(&s, gamma))
}

fn beta_with_sigmas(s: &SigmaSet, gamma: &MomentVector) -> ExplanationVector {
    let total: f64 = gamma.gamma.iter().sum();
    let intercept = (s.sigma0 * gamma.gamma0 + s.sigma1 * total) / s.c_d;
    let coefficients = gamma
        .gamma
        .iter()
        .map(|&g| (s.sigma1 * gamma.gamma0 + s.sigma2 * g + s.sigma3 * (total - g)) / s.c_d)
        .collect();
    ExplanationVector::new(intercept, coefficients, Provenance::Limit)
}

/// Same quantity as [`beta_from_moments`], via a dense `Σ⁻¹` times `Γ`.
pub fn beta_from_moments_matrix(gamma: &MomentVector, d: usize, nu: f64) -> Result<ExplanationVector> {
    check_d(d)?;
    check_bandwidth(nu)?;
    if gamma.d() != d {
        return Err(Error::DimensionMismatch(format!(
            "moment vector has {} entries, expected d = {d}",
            gamma.d()
        )));
    }
    let inv = sigma_inverse_from(&sigma_set(d, nu)?);
    let full = inv.matrix().mul_vec(&gamma.to_full());
    Ok(ExplanationVector::from_full(&full, Provenance::Limit))
}

/// Which values of `z_j` let the detector fire, for one superpixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Allowed {
    Both,
    OnOnly,
    OffOnly,
    Neither,
}

/// Closed-form `Γ` for a shape detector.
///
/// For each superpixel meeting the shape, `z_j = 1` is allowed iff every
/// shape pixel in it has `ξ_u > τ`, and `z_j = 0` iff every one has
/// `ξ̄_u > τ`. With `p` superpixels forced on and `q` forced off, `Γ_0 =
/// α_{p,q}`; `Γ_j` is `α_{p,q}` when `j` is forced on, zero when forced off,
/// and `α_{p+1,q}` when free.
pub fn shape_detector_moments(
    partition: &SuperpixelPartition,
    shape_pixels: &[usize],
    tau: f64,
    image: &Image,
    replacement: &Image,
    nu: f64,
) -> Result<MomentVector> {
    let detector = ShapeDetector::new(shape_pixels.to_vec(), tau)?;
    detector.check_image(image)?;
    image.check_same_shape(replacement, "image vs replacement")?;
    partition.check_image(image)?;
    let d = partition.d();
    check_d(d)?;
    check_bandwidth(nu)?;

    let mut allowed = vec![Allowed::Both; d];
    let (xi, bar) = (image.pixels(), replacement.pixels());
    let mut on_ok = vec![true; d];
    let mut off_ok = vec![true; d];
    let mut touched = vec![false; d];
    for &u in detector.pixels() {
        let j = partition.label(u);
        touched[j] = true;
        on_ok[j] &= xi[u] > tau;
        off_ok[j] &= bar[u] > tau;
    }
    for j in 0..d {
        if touched[j] {
            allowed[j] = match (on_ok[j], off_ok[j]) {
                (true, true) => Allowed::Both,
                (true, false) => Allowed::OnOnly,
                (false, true) => Allowed::OffOnly,
                (false, false) => Allowed::Neither,
            };
        }
    }

    if allowed.contains(&Allowed::Neither) {
        return Ok(MomentVector {
            gamma0: 0.0,
            gamma: vec![0.0; d],
            source: MomentSource::ClosedForm,
        });
    }
    let p = allowed.iter().filter(|a| **a == Allowed::OnOnly).count();
    let q = allowed.iter().filter(|a| **a == Allowed::OffOnly).count();
    let base = alpha_gen(d, p, q, nu)?;
    let free = if p + q < d { alpha_gen(d, p + 1, q, nu)? } else { 0.0 };
    let gamma = allowed
        .iter()
        .map(|a| match a {
            Allowed::OnOnly => base,
            Allowed::OffOnly => 0.0,
            _ => free,
        })
        .collect();
    Ok(MomentVector {
        gamma0: base,
        gamma,
        source: MomentSource::ClosedForm,
    })
}

/// Closed-form `β^f` for the shape detector `1{ξ_u > τ for all u in shape}`.
pub fn beta_shape_detector(
    partition: &SuperpixelPartition,
    shape_pixels: &[usize],
    tau: f64,
    image: &Image,
    replacement: &Image,
    nu: f64,
) -> Result<ExplanationVector> {
    let gamma = shape_detector_moments(partition, shape_pixels, tau, image, replacement, nu)?;
    beta_from_moments(&gamma, partition.d(), nu)
}

/// Closed-form `β^f` for `f(x) = Σ_u λ_u x_u`:
/// `β_j = Σ_{u∈J_j} λ_u (ξ_u − ξ̄_u)` and `β_0 = f(ξ̄)`.
pub fn beta_linear(
    coefficients: &[f64],
    image: &Image,
    replacement: &Image,
    partition: &SuperpixelPartition,
) -> Result<ExplanationVector> {
    image.check_same_shape(replacement, "image vs replacement")?;
    partition.check_image(image)?;
    let model = LinearModel::new(coefficients.to_vec())?;
    let intercept = model.evaluate(replacement)?;
    let c = image.channels();
    let (xi, bar) = (image.pixels(), replacement.pixels());
    let betas = (0..partition.d())
        .map(|j| {
            partition
                .members(j)
                .iter()
                .flat_map(|&u| u * c..(u + 1) * c)
                .map(|k| coefficients[k] * (xi[k] - bar[k]))
                .sum()
        })
        .collect();
    Ok(ExplanationVector::new(intercept, betas, Provenance::Limit))
}

/// How expectations in [`beta_infinity`] are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    /// All `2^d` masks; `d <= 20`.
    Exact,
    MonteCarlo { n: usize, seed: u64 },
}

/// Large-bandwidth limit: `β_j = 2(E[f | z_j = 1] − E[f])` with unweighted
/// expectations. The intercept is the matching limit
/// `(d+1) E[f] − Σ_j E[f | z_j = 1]`.
pub fn beta_infinity(
    model: &dyn BlackBoxModel,
    image: &Image,
    partition: &SuperpixelPartition,
    replacement: &Image,
    estimator: Estimator,
) -> Result<ExplanationVector> {
    let d = partition.d();
    check_d(d)?;
    partition.check_image(image)?;
    image.check_same_shape(replacement, "image vs replacement")?;
    let masks = match estimator {
        Estimator::Exact => all_masks(d)?,
        Estimator::MonteCarlo { n, seed } => draw_masks(d, n, seed)?,
    };
    let (mean, cond) = conditional_means(model, image, partition, replacement, &masks)?;
    let intercept = (d as f64 + 1.0) * mean - cond.iter().sum::<f64>();
    let coefficients = cond.iter().map(|c| 2.0 * (c - mean)).collect();
    Ok(ExplanationVector::new(intercept, coefficients, Provenance::Limit))
}
