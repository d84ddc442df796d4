//! Experiment configuration and the two experiment drivers: LIME against
//! integrated gradients (top-k agreement), and the spread of empirical
//! coefficients around the closed-form limit.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::jaccard::{expected_random_jaccard, jaccard};
use crate::harness::synthetic::SyntheticImages;
use crate::ig::{integrated_gradients_explanation, IgOptions};
use crate::image::{compute_replacement, Image, ReplacementSpec, SuperpixelPartition};
use crate::lime::{explain_with_replacement, top_k_positive, LimeConfig};
use crate::models::{BuiltModel, ModelSpec};
use crate::rng::derive_seed;
use crate::segmentation::{grid_segment, quickshift_segment, GridParams, QuickshiftParams};
use crate::theory::{beta_from_moments, beta_linear, beta_shape_detector, moments_exact};

/// A model spec given inline or as a path to a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    Path(PathBuf),
    Inline(ModelSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageSource {
    /// PGM/PPM or CSV files.
    Paths(Vec<PathBuf>),
    Synthetic(SyntheticImages),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SegmenterConfig {
    Grid(GridParams),
    Quickshift(QuickshiftParams),
}

impl SegmenterConfig {
    pub fn segment(&self, image: &Image) -> Result<SuperpixelPartition> {
        match self {
            SegmenterConfig::Grid(g) => grid_segment(image.height(), image.width(), *g),
            SegmenterConfig::Quickshift(q) => quickshift_segment(image, q),
        }
    }
}

fn default_m() -> usize {
    crate::ig::DEFAULT_STEPS
}

fn default_k_values() -> Vec<usize> {
    vec![5, 10]
}

fn default_repetitions() -> usize {
    1
}

/// Everything an experiment needs, mirrored by the JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelSource,
    pub images: ImageSource,
    pub segmenter: SegmenterConfig,
    pub replacement: ReplacementSpec,
    #[serde(default)]
    pub lime: LimeConfig,
    /// Riemann steps for integrated gradients.
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_k_values")]
    pub k_values: Vec<usize>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub finite_difference_fallback: bool,
    /// Directory that relative paths resolve against; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut config: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.lime.validate()?;
        if self.repetitions == 0 {
            return Err(Error::InvalidParameter("repetitions must be at least 1".into()));
        }
        if self.k_values.is_empty() || self.k_values.contains(&0) {
            return Err(Error::InvalidParameter("k values must be non-empty and >= 1".into()));
        }
        if self.m == 0 {
            return Err(Error::InvalidParameter("m must be at least 1".into()));
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        match &self.model {
            ModelSource::Inline(spec) => Ok(spec.clone()),
            ModelSource::Path(p) => ModelSpec::from_json_file(self.resolve(p)),
        }
    }

    /// Directory against which paths inside the model spec resolve.
    fn model_base_dir(&self) -> PathBuf {
        match &self.model {
            ModelSource::Path(p) => self
                .resolve(p)
                .parent()
                .map(Path::to_path_buf)
                .unwrap_or_default(),
            ModelSource::Inline(_) => self.base_dir.clone(),
        }
    }

    /// `(name, image)` pairs in configuration order.
    pub fn load_images(&self) -> Result<Vec<(String, Image)>> {
        match &self.images {
            ImageSource::Paths(paths) => paths
                .iter()
                .map(|p| Ok((p.display().to_string(), crate::io::read_image(self.resolve(p))?)))
                .collect(),
            ImageSource::Synthetic(s) => Ok(s
                .generate()?
                .into_iter()
                .enumerate()
                .map(|(i, img)| (format!("synthetic-{i}"), img))
                .collect()),
        }
    }
}

/// Seed of repetition `r` on image `i`.
pub fn run_seed(base: u64, image: usize, repetition: usize) -> u64 {
    derive_seed(derive_seed(base, image as u64), repetition as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopK {
    pub k: usize,
    /// 1-based superpixel ids, strongest first.
    pub ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KValue {
    pub k: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionComparison {
    pub repetition: usize,
    pub seed: u64,
    pub lime_intercept: f64,
    pub lime_coefficients: Vec<f64>,
    pub lime_top: Vec<TopK>,
    pub jaccard: Vec<KValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageComparison {
    pub index: usize,
    pub name: String,
    pub d: Option<usize>,
    pub failure: Option<String>,
    pub ig_intercept: Option<f64>,
    pub ig_coefficients: Vec<f64>,
    pub ig_top: Vec<TopK>,
    pub repetitions: Vec<RepetitionComparison>,
    /// Mean over repetitions.
    pub mean_jaccard: Vec<KValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonAggregate {
    pub images_ok: usize,
    pub images_failed: usize,
    /// Mean of the per-image means, over images that succeeded.
    pub mean_jaccard: Vec<KValue>,
    /// Expected Jaccard of a random top-k guess at each image's `d`, averaged.
    pub random_baseline: Vec<KValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub config: ExperimentConfig,
    pub images: Vec<ImageComparison>,
    pub aggregate: ComparisonAggregate,
}

fn top_sets(coefficients: &crate::lime::ExplanationVector, ks: &[usize]) -> Vec<TopK> {
    ks.iter()
        .map(|&k| TopK {
            k,
            ids: top_k_positive(coefficients, k).iter().map(|j| j + 1).collect(),
        })
        .collect()
}

fn compare_image(
    config: &ExperimentConfig,
    spec: &ModelSpec,
    index: usize,
    image: &Image,
) -> Result<(usize, crate::lime::ExplanationVector, Vec<RepetitionComparison>)> {
    let partition = config.segmenter.segment(image)?;
    partition.require_at_least(2)?;
    let bar = compute_replacement(image, &partition, &config.replacement)?;
    let model = spec.build(image.height(), image.width(), image.channels(), &config.model_base_dir())?;
    let options = IgOptions {
        m: config.m,
        finite_difference_fallback: config.finite_difference_fallback,
    };
    let ig = integrated_gradients_explanation(model.as_ref(), image, &bar, &partition, &options)?;
    let ig_top = top_sets(&ig, &config.k_values);
    let reps = (0..config.repetitions)
        .map(|r| {
            let seed = run_seed(config.lime.seed, index, r);
            let lime = LimeConfig {
                seed,
                ..config.lime.clone()
            };
            let expl = explain_with_replacement(image, &partition, &bar, model.as_ref(), &lime)?;
            let lime_top = top_sets(&expl, &config.k_values);
            let jaccard = lime_top
                .iter()
                .zip(&ig_top)
                .map(|(a, b)| KValue {
                    k: a.k,
                    value: jaccard(&a.ids, &b.ids),
                })
                .collect();
            Ok(RepetitionComparison {
                repetition: r,
                seed,
                lime_intercept: expl.intercept,
                lime_coefficients: expl.coefficients,
                lime_top,
                jaccard,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((partition.d(), ig, reps))
}

fn mean_by_k(ks: &[usize], rows: &[&[KValue]]) -> Vec<KValue> {
    ks.iter()
        .enumerate()
        .map(|(i, &k)| KValue {
            k,
            value: if rows.is_empty() {
                f64::NAN
            } else {
                rows.iter().map(|r| r[i].value).sum::<f64>() / rows.len() as f64
            },
        })
        .collect()
}

/// For each image: LIME top-k sets (one per repetition) against the top-k
/// sets of the integrated-gradients explanation. A failing image is recorded
/// and the run continues.
pub fn run_comparison(config: &ExperimentConfig) -> Result<ComparisonReport> {
    config.validate()?;
    let spec = config.model_spec()?;
    let images = config.load_images()?;
    let ks = &config.k_values;
    let results: Vec<ImageComparison> = images
        .par_iter()
        .enumerate()
        .map(|(index, (name, image))| match compare_image(config, &spec, index, image) {
            Ok((d, ig, repetitions)) => {
                let rows: Vec<&[KValue]> = repetitions.iter().map(|r| r.jaccard.as_slice()).collect();
                ImageComparison {
                    index,
                    name: name.clone(),
                    d: Some(d),
                    failure: None,
                    ig_intercept: Some(ig.intercept),
                    ig_top: top_sets(&ig, ks),
                    ig_coefficients: ig.coefficients,
                    mean_jaccard: mean_by_k(ks, &rows),
                    repetitions,
                }
            }
            Err(e) => ImageComparison {
                index,
                name: name.clone(),
                d: None,
                failure: Some(e.to_string()),
                ig_intercept: None,
                ig_coefficients: Vec::new(),
                ig_top: Vec::new(),
                repetitions: Vec::new(),
                mean_jaccard: Vec::new(),
            },
        })
        .collect();

    let ok: Vec<&ImageComparison> = results.iter().filter(|r| r.failure.is_none()).collect();
    let rows: Vec<&[KValue]> = ok.iter().map(|r| r.mean_jaccard.as_slice()).collect();
    let random_baseline = ks
        .iter()
        .map(|&k| KValue {
            k,
            value: if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter()
                    .map(|r| expected_random_jaccard(r.d.unwrap_or(0), k))
                    .sum::<f64>()
                    / ok.len() as f64
            },
        })
        .collect();
    let aggregate = ComparisonAggregate {
        images_ok: ok.len(),
        images_failed: results.len() - ok.len(),
        mean_jaccard: mean_by_k(ks, &rows),
        random_baseline,
    };
    Ok(ComparisonReport {
        config: config.clone(),
        images: results,
        aggregate,
    })
}

/// Five-number summary plus mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateSummary {
    /// 0 for the intercept, otherwise the 1-based superpixel id.
    pub index: usize,
    pub theory: Option<f64>,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationSample {
    pub repetition: usize,
    pub seed: u64,
    /// `[intercept, beta_1, ..., beta_d]`.
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationImage {
    pub index: usize,
    pub name: String,
    pub d: usize,
    /// How the theory overlay was obtained, if at all.
    pub theory_source: Option<String>,
    /// `[intercept, beta_1, ..., beta_d]` of the limit explanation.
    pub theory: Option<Vec<f64>>,
    pub samples: Vec<ConcentrationSample>,
    pub summary: Vec<CoordinateSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub config: ExperimentConfig,
    pub images: Vec<ConcentrationImage>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Sample standard deviation (divisor `n - 1`); zero for a single value.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}

/// Root-mean of per-coordinate sample variances over the superpixel
/// coefficients (the intercept is left out).
pub fn pooled_coefficient_std(samples: &[ConcentrationSample]) -> f64 {
    let d = samples[0].coefficients.len() - 1;
    let var: f64 = (1..=d)
        .map(|j| {
            let col: Vec<f64> = samples.iter().map(|s| s.coefficients[j]).collect();
            sample_std(&col).powi(2)
        })
        .sum::<f64>()
        / d as f64;
    var.sqrt()
}

fn theory_overlay(
    built: &BuiltModel,
    image: &Image,
    partition: &SuperpixelPartition,
    bar: &Image,
    nu: f64,
) -> Result<Option<(String, Vec<f64>)>> {
    let d = partition.d();
    Ok(match built {
        BuiltModel::ShapeDetector(s) => Some((
            "shape-detector closed form".into(),
            beta_shape_detector(partition, s.pixels(), s.tau(), image, bar, nu)?.to_full(),
        )),
        BuiltModel::Linear(l) => Some((
            "linear closed form".into(),
            beta_linear(l.coefficients(), image, bar, partition)?.to_full(),
        )),
        BuiltModel::Constant(c) => {
            let mut full = vec![0.0; d + 1];
            full[0] = c.value;
            Some(("constant".into(), full))
        }
        BuiltModel::Mlp(m) if d <= 12 => {
            let g = moments_exact(m, image, partition, bar, nu)?;
            Some(("exact moments".into(), beta_from_moments(&g, d, nu)?.to_full()))
        }
        BuiltModel::Mlp(_) => None,
    })
}

fn summarize(samples: &[ConcentrationSample], theory: Option<&[f64]>) -> Vec<CoordinateSummary> {
    let p = samples[0].coefficients.len();
    (0..p)
        .map(|j| {
            let mut col: Vec<f64> = samples.iter().map(|s| s.coefficients[j]).collect();
            col.sort_by(|a, b| a.total_cmp(b));
            CoordinateSummary {
                index: j,
                theory: theory.map(|t| t[j]),
                min: col[0],
                q1: quantile(&col, 0.25),
                median: quantile(&col, 0.5),
                q3: quantile(&col, 0.75),
                max: col[col.len() - 1],
                mean: col.iter().sum::<f64>() / col.len() as f64,
                std: sample_std(&col),
            }
        })
        .collect()
}

fn concentrate_image(
    config: &ExperimentConfig,
    spec: &ModelSpec,
    index: usize,
    name: &str,
    image: &Image,
) -> Result<ConcentrationImage> {
    let partition = config.segmenter.segment(image)?;
    partition.require_at_least(2)?;
    let bar = compute_replacement(image, &partition, &config.replacement)?;
    let built = spec.build_concrete(image.height(), image.width(), image.channels(), &config.model_base_dir())?;
    let overlay = theory_overlay(&built, image, &partition, &bar, config.lime.nu)?;
    let samples = (0..config.repetitions)
        .map(|r| {
            let seed = run_seed(config.lime.seed, index, r);
            let lime = LimeConfig {
                seed,
                ..config.lime.clone()
            };
            let expl = explain_with_replacement(image, &partition, &bar, built.as_model(), &lime)?;
            Ok(ConcentrationSample {
                repetition: r,
                seed,
                coefficients: expl.to_full(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&samples, overlay.as_ref().map(|(_, t)| t.as_slice()));
    let (theory_source, theory) = match overlay {
        Some((s, t)) => (Some(s), Some(t)),
        None => (None, None),
    };
    Ok(ConcentrationImage {
        index,
        name: name.to_string(),
        d: partition.d(),
        theory_source,
        theory,
        samples,
        summary,
    })
}

/// Repeats LIME `repetitions` times per image with distinct seeds and sets
/// the coefficient samples beside the closed-form limit.
pub fn run_concentration(config: &ExperimentConfig) -> Result<ConcentrationReport> {
    config.validate()?;
    let spec = config.model_spec()?;
    let images = config.load_images()?;
    let results = images
        .par_iter()
        .enumerate()
        .map(|(i, (name, img))| concentrate_image(config, &spec, i, name, img))
        .collect::<Result<Vec<_>>>()?;
    Ok(ConcentrationReport {
        config: config.clone(),
        images: results,
    })
}

/// Gnuplot-ready table, one row per coordinate:
/// `index theory min q1 median q3 max` (theory is `NaN` when unknown).
pub fn gnuplot_table(image: &ConcentrationImage) -> String {
    let mut out = String::from("# index theory min q1 median q3 max\n");
    for s in &image.summary {
        out.push_str(&format!(
            "{} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e}\n",
            s.index,
            s.theory.unwrap_or(f64::NAN),
            s.min,
            s.q1,
            s.median,
            s.q3,
            s.max
        ));
    }
    out
}

/// CSV of every coefficient in a comparison: `image,repetition,method,index,value`
/// where repetition is empty for integrated gradients and index 0 is the intercept.
pub fn comparison_csv(report: &ComparisonReport) -> String {
    let mut out = String::from("image,repetition,method,index,value\n");
    for img in report.images.iter().filter(|i| i.failure.is_none()) {
        if let Some(b0) = img.ig_intercept {
            out.push_str(&format!("{},,ig,0,{:.16e}\n", img.index, b0));
        }
        for (j, v) in img.ig_coefficients.iter().enumerate() {
            out.push_str(&format!("{},,ig,{},{:.16e}\n", img.index, j + 1, v));
        }
        for r in &img.repetitions {
            out.push_str(&format!("{},{},lime,0,{:.16e}\n", img.index, r.repetition, r.lime_intercept));
            for (j, v) in r.lime_coefficients.iter().enumerate() {
                out.push_str(&format!("{},{},lime,{},{:.16e}\n", img.index, r.repetition, j + 1, v));
            }
        }
    }
    out
}
