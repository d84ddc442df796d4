//! Integrated gradients along the straight path from `ξ` to `ξ̄`, and the
//! per-superpixel approximate explanation built from them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, SuperpixelPartition};
use crate::lime::{ExplanationVector, Provenance};
use crate::models::BlackBoxModel;

/// Default number of Riemann steps.
pub const DEFAULT_STEPS: usize = 20;

/// Step of the central finite-difference fallback.
pub const FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IgOptions {
    pub m: usize,
    /// Use central differences when the model has no analytic gradient.
    /// Costs two model queries per pixel value per path point.
    pub finite_difference_fallback: bool,
}

impl Default for IgOptions {
    fn default() -> Self {
        Self {
            m: DEFAULT_STEPS,
            finite_difference_fallback: false,
        }
    }
}

/// Per-pixel averaged gradient `IG^m_u`, laid out like `Image::pixels`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathGradient {
    pub values: Vec<f64>,
    pub m: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// `f(ξ̄)`, kept for the intercept of the approximate explanation.
    pub baseline_value: f64,
}

/// `(1 − a) ξ + a ξ̄`, channel-wise.
pub fn path_point(xi: &Image, bar: &Image, a: f64) -> Result<Image> {
    xi.check_same_shape(bar, "image vs baseline")?;
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::InvalidParameter(format!("path position must lie in [0, 1], got {a}")));
    }
    let pixels = xi
        .pixels()
        .iter()
        .zip(bar.pixels())
        .map(|(x, b)| ((1.0 - a) * x + a * b).clamp(0.0, 1.0))
        .collect();
    Ok(Image::from_raw(xi.height(), xi.width(), xi.channels(), pixels))
}

fn finite_difference_gradient(model: &dyn BlackBoxModel, x: &Image) -> Result<Vec<f64>> {
    let mut buf = x.pixels().to_vec();
    let mut grad = vec![0.0; buf.len()];
    for k in 0..buf.len() {
        let orig = buf[k];
        buf[k] = orig + FD_STEP;
        let up = model.evaluate(&Image::from_raw(x.height(), x.width(), x.channels(), buf.clone()))?;
        buf[k] = orig - FD_STEP;
        let down = model.evaluate(&Image::from_raw(x.height(), x.width(), x.channels(), buf.clone()))?;
        buf[k] = orig;
        grad[k] = (up - down) / (2.0 * FD_STEP);
    }
    Ok(grad)
}

fn gradient_at(model: &dyn BlackBoxModel, x: &Image, fallback: bool) -> Result<Vec<f64>> {
    if model.has_gradient() {
        model.gradient(x)
    } else if fallback {
        finite_difference_gradient(model, x)
    } else {
        Err(Error::GradientUnavailable)
    }
}

/// Right Riemann sum `(1/m) Σ_{k=1}^{m} ∇f((1 − k/m) ξ + (k/m) ξ̄)`.
///
/// The path points are evaluated in parallel and summed in `k` order.
pub fn averaged_gradient(
    model: &dyn BlackBoxModel,
    xi: &Image,
    bar: &Image,
    options: &IgOptions,
) -> Result<PathGradient> {
    xi.check_same_shape(bar, "image vs baseline")?;
    let m = options.m;
    if m == 0 {
        return Err(Error::InvalidParameter("IG needs at least one step".into()));
    }
    if !model.has_gradient() && !options.finite_difference_fallback {
        return Err(Error::GradientUnavailable);
    }
    let grads: Vec<Result<Vec<f64>>> = (1..=m)
        .into_par_iter()
        .map(|k| {
            let x = path_point(xi, bar, k as f64 / m as f64)?;
            gradient_at(model, &x, options.finite_difference_fallback)
        })
        .collect();
    let mut values = vec![0.0; xi.pixels().len()];
    for g in grads {
        for (acc, v) in values.iter_mut().zip(g?) {
            *acc += v;
        }
    }
    values.iter_mut().for_each(|v| *v /= m as f64);
    Ok(PathGradient {
        values,
        m,
        height: xi.height(),
        width: xi.width(),
        channels: xi.channels(),
        baseline_value: model.evaluate(bar)?,
    })
}

/// `β_apx,j = Σ_{u∈J_j} (ξ_u − ξ̄_u) IG^m_u`; the intercept is `f(ξ̄)`.
pub fn approx_explanation(
    ig: &PathGradient,
    xi: &Image,
    bar: &Image,
    partition: &SuperpixelPartition,
) -> Result<ExplanationVector> {
    xi.check_same_shape(bar, "image vs baseline")?;
    partition.check_image(xi)?;
    if (ig.height, ig.width, ig.channels) != (xi.height(), xi.width(), xi.channels()) {
        return Err(Error::DimensionMismatch(format!(
            "path gradient is {}x{}x{}, image is {}x{}x{}",
            ig.height,
            ig.width,
            ig.channels,
            xi.height(),
            xi.width(),
            xi.channels()
        )));
    }
    let c = xi.channels();
    let (x, b) = (xi.pixels(), bar.pixels());
    let coefficients = (0..partition.d())
        .map(|j| {
            partition
                .members(j)
                .iter()
                .flat_map(|&u| u * c..(u + 1) * c)
                .map(|k| (x[k] - b[k]) * ig.values[k])
                .sum()
        })
        .collect();
    Ok(ExplanationVector::new(
        ig.baseline_value,
        coefficients,
        Provenance::IntegratedGradients,
    ))
}

/// `averaged_gradient` followed by `approx_explanation`.
pub fn integrated_gradients_explanation(
    model: &dyn BlackBoxModel,
    xi: &Image,
    bar: &Image,
    partition: &SuperpixelPartition,
    options: &IgOptions,
) -> Result<ExplanationVector> {
    let ig = averaged_gradient(model, xi, bar, options)?;
    approx_explanation(&ig, xi, bar, partition)
}
