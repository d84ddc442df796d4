//! The empirical LIME pipeline for images.
//!
//! Masks `z_i` are drawn with independent fair coins, each perturbed image
//! mixes the original and the replacement superpixel by superpixel, and the
//! surrogate is a weighted ridge regression of the model outputs on the
//! masks. Sample weights depend only on the number of deactivated
//! superpixels through [`psi`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{
    apply_mask_unchecked, compute_replacement, Image, MaskVector, ReplacementSpec,
    SuperpixelPartition,
};
use crate::linalg::{solve_spd, Matrix};
use crate::models::BlackBoxModel;
use crate::rng::counter_bit;

/// Sampling and regression settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LimeConfig {
    /// Number of perturbed samples.
    pub n: usize,
    /// Kernel bandwidth; `"inf"` in JSON for the large-bandwidth limit.
    #[serde(with = "bandwidth_serde")]
    pub nu: f64,
    /// Ridge penalty on the superpixel coefficients (the intercept is not penalized).
    pub lambda: f64,
    pub seed: u64,
    /// How many top positive superpixels to report.
    pub k: usize,
    /// Model queries per parallel work unit.
    pub batch_size: usize,
}

impl Default for LimeConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            nu: 0.25,
            lambda: 1.0,
            seed: 0,
            k: 5,
            batch_size: 64,
        }
    }
}

impl LimeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("n must be at least 1".into()));
        }
        check_bandwidth(self.nu)?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

mod bandwidth_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(nu: &f64, s: S) -> Result<S::Ok, S::Error> {
        if nu.is_infinite() && *nu > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*nu)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Number(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Number(v) => Ok(v),
            Raw::Text(t) if matches!(t.as_str(), "inf" | "infinity" | "Infinity") => Ok(f64::INFINITY),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("invalid bandwidth {t:?}"))),
        }
    }
}

/// Accepts any `nu > 0`, including `+inf` for the large-bandwidth limit.
pub fn check_bandwidth(nu: f64) -> Result<()> {
    if nu > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("bandwidth must be > 0, got {nu}")))
    }
}

/// Where an explanation vector came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Empirical,
    Limit,
    IntegratedGradients,
}

/// Intercept plus one interpretable coefficient per superpixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationVector {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<LimeConfig>,
}

impl ExplanationVector {
    pub fn new(intercept: f64, coefficients: Vec<f64>, provenance: Provenance) -> Self {
        Self {
            intercept,
            coefficients,
            provenance,
            config: None,
        }
    }

    /// Builds from `[intercept, beta_1, ..., beta_d]`.
    pub fn from_full(full: &[f64], provenance: Provenance) -> Self {
        Self::new(full[0], full[1..].to_vec(), provenance)
    }

    pub fn d(&self) -> usize {
        self.coefficients.len()
    }

    /// `[intercept, beta_1, ..., beta_d]`.
    pub fn to_full(&self) -> Vec<f64> {
        std::iter::once(self.intercept)
            .chain(self.coefficients.iter().copied())
            .collect()
    }

    /// Max-norm distance over all `d + 1` entries.
    pub fn max_abs_diff(&self, other: &ExplanationVector) -> f64 {
        assert_eq!(self.d(), other.d(), "explanations of different length");
        self.to_full()
            .iter()
            .zip(other.to_full())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Weight as a function of the fraction `t` of deactivated superpixels:
/// `exp(-(1 - sqrt(1 - t))^2 / (2 nu^2))`.
pub fn psi(t: f64, nu: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParameter(format!("psi argument {t} outside [0, 1]")));
    }
    check_bandwidth(nu)?;
    Ok(psi_unchecked(t, nu))
}

#[inline]
pub(crate) fn psi_unchecked(t: f64, nu: f64) -> f64 {
    let gap = 1.0 - (1.0 - t).sqrt();
    (-(gap * gap) / (2.0 * nu * nu)).exp()
}

/// LIME weight of mask `z`: `psi(zeros(z) / d)`.
pub fn weight_of_mask(z: &MaskVector, nu: f64) -> Result<f64> {
    if z.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "masks need at least 2 superpixels, got {}",
            z.len()
        )));
    }
    psi(z.count_zeros() as f64 / z.len() as f64, nu)
}

/// `n` masks of length `d`; entry `(i, j)` is a fair coin derived from `(seed, i, j)`.
pub fn draw_masks(d: usize, n: usize, seed: u64) -> Result<Vec<MaskVector>> {
    if d < 2 || n == 0 {
        return Err(Error::InvalidParameter(format!(
            "draw_masks needs d >= 2 and n >= 1, got d = {d}, n = {n}"
        )));
    }
    Ok((0..n)
        .into_par_iter()
        .map(|i| MaskVector::new((0..d).map(|j| counter_bit(seed, i as u64, j as u64)).collect()))
        .collect())
}

/// Masks, their weights and the model responses.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    masks: Vec<MaskVector>,
    weights: Vec<f64>,
    responses: Vec<f64>,
}

impl SampleBatch {
    pub fn new(masks: Vec<MaskVector>, weights: Vec<f64>, responses: Vec<f64>) -> Result<Self> {
        let n = masks.len();
        if n == 0 || weights.len() != n || responses.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "batch has {n} masks, {} weights, {} responses",
                weights.len(),
                responses.len()
            )));
        }
        let d = masks[0].len();
        if masks.iter().any(|m| m.len() != d) {
            return Err(Error::DimensionMismatch("masks of different lengths".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && **w <= 1.0)) {
            return Err(Error::InvalidParameter(format!("weight {w} outside (0, 1]")));
        }
        if responses.iter().any(|y| !y.is_finite()) {
            return Err(Error::Model("non-finite model response".into()));
        }
        Ok(Self {
            masks,
            weights,
            responses,
        })
    }

    /// Weights each mask with [`weight_of_mask`].
    pub fn with_psi_weights(masks: Vec<MaskVector>, responses: Vec<f64>, nu: f64) -> Result<Self> {
        let weights = masks
            .iter()
            .map(|z| weight_of_mask(z, nu))
            .collect::<Result<Vec<_>>>()?;
        Self::new(masks, weights, responses)
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn d(&self) -> usize {
        self.masks[0].len()
    }

    pub fn masks(&self) -> &[MaskVector] {
        &self.masks
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }
}

fn column_name(j: usize) -> String {
    if j == 0 {
        "intercept".into()
    } else {
        format!("superpixel {j}")
    }
}

/// Weighted ridge fit with an unpenalized intercept:
/// `argmin sum_i w_i (y_i - b_0 - b^T z_i)^2 + lambda |b|^2`.
///
/// Solved through the normal equations. Gram accumulation runs over samples
/// in index order so the result does not depend on scheduling.
pub fn fit_surrogate(batch: &SampleBatch, lambda: f64) -> Result<ExplanationVector> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
    }
    let p = batch.d() + 1;
    let mut gram = Matrix::zeros(p, p);
    let mut rhs = vec![0.0; p];
    let mut active = Vec::with_capacity(p);
    for ((z, &w), &y) in batch.masks().iter().zip(batch.weights()).zip(batch.responses()) {
        active.clear();
        active.push(0);
        active.extend(z.bits().iter().enumerate().filter(|(_, b)| **b).map(|(j, _)| j + 1));
        for &a in &active {
            rhs[a] += w * y;
            for &b in &active {
                gram[(a, b)] += w;
            }
        }
    }
    for j in 1..p {
        gram[(j, j)] += lambda;
    }
    let beta = solve_spd(&gram, &rhs, column_name)?;
    Ok(ExplanationVector::from_full(&beta, Provenance::Empirical))
}

/// Evaluates `model` on the perturbed image of every mask, in mask order.
pub(crate) fn evaluate_masks(
    model: &dyn BlackBoxModel,
    image: &Image,
    replacement: &Image,
    partition: &SuperpixelPartition,
    masks: &[MaskVector],
    batch_size: usize,
) -> Result<Vec<f64>> {
    let chunks: Vec<Result<Vec<f64>>> = masks
        .par_chunks(batch_size.max(1))
        .map(|chunk| {
            chunk
                .iter()
                .map(|z| {
                    let x = apply_mask_unchecked(image, replacement, partition, z.bits());
                    model.evaluate(&x)
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(masks.len());
    for chunk in chunks {
        out.extend(chunk?);
    }
    Ok(out)
}

/// Draws the masks, queries the model and returns the weighted batch.
pub fn sample_batch(
    image: &Image,
    partition: &SuperpixelPartition,
    replacement: &Image,
    model: &dyn BlackBoxModel,
    config: &LimeConfig,
) -> Result<SampleBatch> {
    config.validate()?;
    partition.require_at_least(2)?;
    partition.check_image(image)?;
    image.check_same_shape(replacement, "image vs replacement")?;
    let masks = draw_masks(partition.d(), config.n, config.seed)?;
    let responses = evaluate_masks(model, image, replacement, partition, &masks, config.batch_size)?;
    SampleBatch::with_psi_weights(masks, responses, config.nu)
}

/// Full LIME run: replacement image, masks, model queries, weights, surrogate fit.
pub fn explain(
    image: &Image,
    partition: &SuperpixelPartition,
    replacement: &ReplacementSpec,
    model: &dyn BlackBoxModel,
    config: &LimeConfig,
) -> Result<ExplanationVector> {
    let bar = compute_replacement(image, partition, replacement)?;
    explain_with_replacement(image, partition, &bar, model, config)
}

/// As [`explain`] with a precomputed replacement image.
pub fn explain_with_replacement(
    image: &Image,
    partition: &SuperpixelPartition,
    replacement: &Image,
    model: &dyn BlackBoxModel,
    config: &LimeConfig,
) -> Result<ExplanationVector> {
    let batch = sample_batch(image, partition, replacement, model, config)?;
    let mut expl = fit_surrogate(&batch, config.lambda)?;
    expl.config = Some(config.clone());
    Ok(expl)
}

/// 0-based superpixel indices of the `k` largest strictly positive
/// coefficients, largest first; ties go to the smaller index.
pub fn top_k_positive(expl: &ExplanationVector, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..expl.d()).filter(|&j| expl.coefficients[j] > 0.0).collect();
    idx.sort_by(|&a, &b| {
        expl.coefficients[b]
            .partial_cmp(&expl.coefficients[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ConstantModel, LinearModel};
    use crate::segmentation::{grid_segment, GridParams};
    use proptest::prelude::*;

    fn cosine_weight(z: &MaskVector, nu: f64) -> f64 {
        let d = z.len() as f64;
        let ones = (z.len() - z.count_zeros()) as f64;
        let dist = 1.0 - ones / (d.sqrt() * ones.sqrt());
        (-(dist * dist) / (2.0 * nu * nu)).exp()
    }

    #[test]
    fn psi_values() {
        assert_eq!(psi(0.0, 0.25).unwrap(), 1.0);
        assert_eq!(psi(0.0, 3.0).unwrap(), 1.0);
        assert!((psi(1.0, 0.25).unwrap() - (-8.0f64).exp()).abs() < 1e-18);
        assert!((psi(1.0, 0.25).unwrap() - 3.3546e-4).abs() < 1e-8);
        // (1 - sqrt(1/2))^2 / (2 * 0.0625)
        let expected = (-(1.0 - 0.5f64.sqrt()).powi(2) / 0.125).exp();
        assert!((psi(0.5, 0.25).unwrap() - expected).abs() < 1e-15);
        // 0.503438 to six decimals (truncated; the exact value is 0.5034396...).
        assert!((psi(0.5, 0.25).unwrap() - 0.503438).abs() < 2e-6);
        assert!(psi(1.5, 0.25).is_err());
        assert!(psi(-0.1, 0.25).is_err());
        assert!(psi(0.5, 0.0).is_err());
        assert_eq!(psi(1.0, f64::INFINITY).unwrap(), 1.0);
    }

    #[test]
    fn mask_weights() {
        assert_eq!(weight_of_mask(&MaskVector::ones(5), 0.25).unwrap(), 1.0);
        let nu = 0.4;
        assert!(
            (weight_of_mask(&MaskVector::zeros(5), nu).unwrap() - (-1.0 / (2.0 * nu * nu)).exp())
                .abs()
                < 1e-15
        );
        let w = weight_of_mask(&MaskVector::new(vec![true, false]), 0.25).unwrap();
        assert!((w - 0.5034396).abs() < 1e-7);
        assert!(weight_of_mask(&MaskVector::ones(1), 0.25).is_err());
    }

    #[test]
    fn psi_matches_cosine_distance_form() {
        for code in 0..(1u64 << 6) - 1 {
            let z = MaskVector::from_code(code | 1, 6);
            let a = weight_of_mask(&z, 0.3).unwrap();
            assert!((a - cosine_weight(&z, 0.3)).abs() < 1e-15);
        }
    }

    #[test]
    fn masks_are_fair_independent_and_reproducible() {
        let (d, n) = (8, 20_000);
        let m = draw_masks(d, n, 99).unwrap();
        assert_eq!(m, draw_masks(d, n, 99).unwrap());
        assert_ne!(m, draw_masks(d, n, 100).unwrap());
        let total: usize = m.iter().map(|z| d - z.count_zeros()).sum();
        let mean = total as f64 / (n * d) as f64;
        assert!((mean - 0.5).abs() < 3.0 / ((n * d) as f64).sqrt());
        for a in 0..d {
            for b in a + 1..d {
                let (mut ea, mut eb, mut eab) = (0.0, 0.0, 0.0);
                for z in &m {
                    let (x, y) = (z.get(a) as u8 as f64, z.get(b) as u8 as f64);
                    ea += x;
                    eb += y;
                    eab += x * y;
                }
                let nf = n as f64;
                let cov = eab / nf - (ea / nf) * (eb / nf);
                assert!(cov.abs() < 3.0 / nf.sqrt(), "cov({a},{b}) = {cov}");
            }
        }
        assert!(draw_masks(1, 5, 0).is_err());
    }

    fn enumerated(d: usize) -> Vec<MaskVector> {
        (0..1u64 << d).map(|c| MaskVector::from_code(c, d)).collect()
    }

    #[test]
    fn constant_response_gives_zero_coefficients() {
        let masks = draw_masks(4, 200, 1).unwrap();
        let batch = SampleBatch::with_psi_weights(masks, vec![0.7; 200], 0.25).unwrap();
        for lambda in [0.0, 1.0, 10.0] {
            let e = fit_surrogate(&batch, lambda).unwrap();
            assert!((e.intercept - 0.7).abs() < 1e-12);
            assert!(e.coefficients.iter().all(|b| b.abs() < 1e-12));
        }
    }

    #[test]
    fn enumerated_design_recovers_indicator() {
        let masks = enumerated(2);
        let y: Vec<f64> = masks.iter().map(|z| z.get(0) as u8 as f64).collect();
        let batch = SampleBatch::new(masks, vec![1.0; 4], y).unwrap();
        let e = fit_surrogate(&batch, 0.0).unwrap();
        assert!(e.intercept.abs() < 1e-14);
        assert!((e.coefficients[0] - 1.0).abs() < 1e-14);
        assert!(e.coefficients[1].abs() < 1e-14);
    }

    #[test]
    fn never_toggled_column_is_singular() {
        let masks: Vec<MaskVector> = (0..8)
            .map(|i| MaskVector::new(vec![i % 2 == 0, true, i % 4 < 2]))
            .collect();
        let batch = SampleBatch::new(masks, vec![1.0; 8], (0..8).map(f64::from).collect()).unwrap();
        match fit_surrogate(&batch, 0.0) {
            Err(Error::Singular { column, name, .. }) => {
                assert_eq!(column, 2);
                assert_eq!(name, "superpixel 2");
            }
            other => panic!("expected singular, got {other:?}"),
        }
        assert!(fit_surrogate(&batch, 1.0).is_ok());
    }

    #[test]
    fn small_lambda_converges_to_ols() {
        let masks = draw_masks(6, 500, 3).unwrap();
        let y: Vec<f64> = masks
            .iter()
            .enumerate()
            .map(|(i, z)| z.get(0) as u8 as f64 * 2.0 - z.get(3) as u8 as f64 + (i % 7) as f64 * 0.01)
            .collect();
        let batch = SampleBatch::with_psi_weights(masks, y, 0.25).unwrap();
        let a = fit_surrogate(&batch, 0.0).unwrap();
        let b = fit_surrogate(&batch, 1e-8).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-6);
    }

    #[test]
    fn top_k_rules() {
        let e = ExplanationVector::new(0.0, vec![0.1, 0.5, 0.3], Provenance::Empirical);
        assert_eq!(top_k_positive(&e, 2), vec![1, 2]);
        assert_eq!(top_k_positive(&e, 10), vec![1, 2, 0]);
        let neg = ExplanationVector::new(1.0, vec![-0.1, 0.0, -2.0], Provenance::Empirical);
        assert!(top_k_positive(&neg, 3).is_empty());
        let tie = ExplanationVector::new(0.0, vec![0.2, 0.4, 0.4, 0.2], Provenance::Empirical);
        assert_eq!(top_k_positive(&tie, 3), vec![1, 2, 0]);
    }

    #[test]
    fn explain_constant_and_linear_models() {
        let img = Image::new(4, 4, 1, (0..16).map(|u| u as f64 / 15.0).collect()).unwrap();
        let part = grid_segment(4, 4, GridParams { rows: 2, cols: 2 }).unwrap();
        let cfg = LimeConfig {
            n: 2000,
            lambda: 0.0,
            seed: 5,
            ..Default::default()
        };
        let e = explain(&img, &part, &ReplacementSpec::black(1), &ConstantModel { value: 2.0 }, &cfg)
            .unwrap();
        assert!(e.coefficients.iter().all(|b| b.abs() < 1e-10));
        assert_eq!(e.config.as_ref().unwrap().seed, 5);

        // A linear model is exactly linear in z, so OLS recovers the limit exactly.
        let lambdas: Vec<f64> = (0..16).map(|u| (u as f64 - 7.5) / 4.0).collect();
        let f = LinearModel::new(lambdas.clone()).unwrap();
        let e = explain(&img, &part, &ReplacementSpec::black(1), &f, &cfg).unwrap();
        for j in 0..4 {
            let expected: f64 = part.members(j).iter().map(|&u| lambdas[u] * img.pixels()[u]).sum();
            assert!((e.coefficients[j] - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn explain_is_independent_of_thread_count() {
        let img = Image::new(4, 4, 1, (0..16).map(|u| (u % 5) as f64 / 4.0).collect()).unwrap();
        let part = grid_segment(4, 4, GridParams { rows: 2, cols: 2 }).unwrap();
        let f = crate::models::Mlp::random(&[16, 4, 1], 2, 1.0).unwrap();
        let cfg = LimeConfig {
            n: 300,
            batch_size: 7,
            ..Default::default()
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    explain(&img, &part, &ReplacementSpec::MeanPerSuperpixel, &f, &cfg).unwrap()
                })
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.to_full(), b.to_full());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn ols_is_scale_equivariant(seed in 0u64..1000, c in 0.1f64..10.0) {
            let masks = draw_masks(4, 120, seed).unwrap();
            let y: Vec<f64> = masks.iter().enumerate()
                .map(|(i, z)| z.count_zeros() as f64 + ((i * 31 + seed as usize) % 11) as f64 / 11.0)
                .collect();
            let scaled: Vec<f64> = y.iter().map(|v| v * c).collect();
            let a = fit_surrogate(&SampleBatch::with_psi_weights(masks.clone(), y, 0.25).unwrap(), 0.0).unwrap();
            let b = fit_surrogate(&SampleBatch::with_psi_weights(masks, scaled, 0.25).unwrap(), 0.0).unwrap();
            for (x, y) in a.coefficients.iter().zip(&b.coefficients) {
                prop_assert!((x * c - y).abs() <= 1e-9 * (1.0 + y.abs()));
            }
            prop_assert_eq!(top_k_positive(&a, 3), top_k_positive(&b, 3));
        }

        #[test]
        fn weights_equal_psi_of_zero_fraction(seed in 0u64..1000, d in 2usize..20) {
            for z in draw_masks(d, 50, seed).unwrap() {
                let w = weight_of_mask(&z, 0.25).unwrap();
                let expected = psi(z.count_zeros() as f64 / d as f64, 0.25).unwrap();
                prop_assert!((w - expected).abs() <= 1e-15);
            }
        }
    }
}
