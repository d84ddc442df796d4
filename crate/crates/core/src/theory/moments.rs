//! Moment vectors `Γ = (E[π f(x)], E[π z_1 f(x)], …, E[π z_d f(x)])`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, MaskVector, SuperpixelPartition};
use crate::lime::{check_bandwidth, draw_masks, evaluate_masks, psi_unchecked, SampleBatch};
use crate::models::BlackBoxModel;
use crate::theory::alpha::MAX_ENUMERATION_D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentSource {
    ExactEnumeration,
    MonteCarlo,
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentVector {
    /// `E[π f(x)]`.
    pub gamma0: f64,
    /// `E[π z_j f(x)]` for each superpixel.
    pub gamma: Vec<f64>,
    pub source: MomentSource,
}

impl MomentVector {
    pub fn d(&self) -> usize {
        self.gamma.len()
    }

    /// `[Γ_0, Γ_1, ..., Γ_d]`.
    pub fn to_full(&self) -> Vec<f64> {
        std::iter::once(self.gamma0)
            .chain(self.gamma.iter().copied())
            .collect()
    }

    pub fn max_abs_diff(&self, other: &MomentVector) -> f64 {
        self.to_full()
            .iter()
            .zip(other.to_full())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Every mask of length `d`, in code order; `d <= 20`.
pub fn all_masks(d: usize) -> Result<Vec<MaskVector>> {
    if d > MAX_ENUMERATION_D {
        return Err(Error::EnumerationTooLarge {
            d,
            limit: MAX_ENUMERATION_D,
        });
    }
    Ok((0..1u64 << d).map(|c| MaskVector::from_code(c, d)).collect())
}

fn check_inputs(image: &Image, partition: &SuperpixelPartition, replacement: &Image, nu: f64) -> Result<()> {
    partition.require_at_least(2)?;
    partition.check_image(image)?;
    image.check_same_shape(replacement, "image vs replacement")?;
    check_bandwidth(nu)
}

/// Accumulates `Γ` from per-mask weights and responses, in mask order.
fn accumulate(masks: &[MaskVector], weights: &[f64], responses: &[f64], scale: f64) -> (f64, Vec<f64>) {
    let d = masks[0].len();
    let mut gamma0 = 0.0;
    let mut gamma = vec![0.0; d];
    for ((z, w), y) in masks.iter().zip(weights).zip(responses) {
        let v = w * y;
        gamma0 += v;
        for (g, &on) in gamma.iter_mut().zip(z.bits()) {
            if on {
                *g += v;
            }
        }
    }
    gamma0 *= scale;
    gamma.iter_mut().for_each(|g| *g *= scale);
    (gamma0, gamma)
}

fn weights_of(masks: &[MaskVector], nu: f64) -> Vec<f64> {
    masks
        .iter()
        .map(|z| psi_unchecked(z.count_zeros() as f64 / z.len() as f64, nu))
        .collect()
}

/// Exact `Γ` by summing over all `2^d` masks.
pub fn moments_exact(
    model: &dyn BlackBoxModel,
    image: &Image,
    partition: &SuperpixelPartition,
    replacement: &Image,
    nu: f64,
) -> Result<MomentVector> {
    check_inputs(image, partition, replacement, nu)?;
    let masks = all_masks(partition.d())?;
    let responses = evaluate_masks(model, image, replacement, partition, &masks, 256)?;
    let weights = weights_of(&masks, nu);
    let (gamma0, gamma) = accumulate(&masks, &weights, &responses, 1.0 / masks.len() as f64);
    Ok(MomentVector {
        gamma0,
        gamma,
        source: MomentSource::ExactEnumeration,
    })
}

/// Every mask once, with its ψ weight and model response: the exact design
/// that LIME's sampled design approximates. `d <= 20`.
pub fn enumerated_batch(
    model: &dyn BlackBoxModel,
    image: &Image,
    partition: &SuperpixelPartition,
    replacement: &Image,
    nu: f64,
) -> Result<SampleBatch> {
    check_inputs(image, partition, replacement, nu)?;
    let masks = all_masks(partition.d())?;
    let responses = evaluate_masks(model, image, replacement, partition, &masks, 256)?;
    SampleBatch::with_psi_weights(masks, responses, nu)
}

/// Sample-average estimate of `Γ` over `n` masks drawn as LIME draws them.
pub fn moments_monte_carlo(
    model: &dyn BlackBoxModel,
    image: &Image,
    partition: &SuperpixelPartition,
    replacement: &Image,
    nu: f64,
    n: usize,
    seed: u64,
) -> Result<MomentVector> {
    check_inputs(image, partition, replacement, nu)?;
    let masks = draw_masks(partition.d(), n, seed)?;
    let responses = evaluate_masks(model, image, replacement, partition, &masks, 256)?;
    let weights = weights_of(&masks, nu);
    let (gamma0, gamma) = accumulate(&masks, &weights, &responses, 1.0 / n as f64);
    Ok(MomentVector {
        gamma0,
        gamma,
        source: MomentSource::MonteCarlo,
    })
}

/// Unweighted `E[f(x)]` and `E[f(x) | z_j = 1]`, exact or sampled.
pub(crate) fn conditional_means(
    model: &dyn BlackBoxModel,
    image: &Image,
    partition: &SuperpixelPartition,
    replacement: &Image,
    masks: &[MaskVector],
) -> Result<(f64, Vec<f64>)> {
    let responses = evaluate_masks(model, image, replacement, partition, masks, 256)?;
    let d = partition.d();
    let mut total = 0.0;
    let mut on_sum = vec![0.0; d];
    let mut on_count = vec![0usize; d];
    for (z, y) in masks.iter().zip(&responses) {
        total += y;
        for j in 0..d {
            if z.get(j) {
                on_sum[j] += y;
                on_count[j] += 1;
            }
        }
    }
    let mean = total / masks.len() as f64;
    let cond = on_sum
        .iter()
        .zip(&on_count)
        .enumerate()
        .map(|(j, (s, &c))| {
            if c == 0 {
                Err(Error::Singular {
                    column: j + 1,
                    name: format!("superpixel {}", j + 1),
                    pivot: 0.0,
                    threshold: 0.0,
                })
            } else {
                Ok(s / c as f64)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((mean, cond))
}
