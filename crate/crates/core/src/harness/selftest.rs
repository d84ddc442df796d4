//! Oracle and identity suites run by the `selftest` command.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::harness::jaccard::random_baseline;
use crate::ig::{integrated_gradients_explanation, IgOptions};
use crate::image::{compute_replacement, Image, ReplacementSpec};
use crate::lime::fit_surrogate;
use crate::linalg::Matrix;
use crate::models::{BlackBoxModel, LinearModel, Mlp, ShapeDetector};
use crate::segmentation::{grid_segment, GridParams};
use crate::theory::{
    alpha_bruteforce, alpha_gen, beta_from_moments, beta_from_moments_matrix, beta_infinity, beta_linear,
    beta_shape_detector, combinatorial_v, enumerated_batch, min_sample_size, moments_exact, sigma_inverse,
    sigma_matrix, sigma_set, Estimator,
};

pub const NU_GRID: [f64; 5] = [0.25, 0.5, 1.0, 5.0, 100.0];

/// Knobs for checking that the suites can fail.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SelftestOptions {
    /// Added to every `σ_2` before the identity suite runs.
    pub sigma2_perturbation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    /// Largest observed error, or the reason for failure.
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestReport {
    pub suites: Vec<SuiteResult>,
    pub all_passed: bool,
}

impl SelftestReport {
    /// Fixed-width pass/fail table.
    pub fn table(&self) -> String {
        let mut out = format!("{:<28} {:<6} {:>9}  {}\n", "suite", "result", "seconds", "detail");
        for s in &self.suites {
            out.push_str(&format!(
                "{:<28} {:<6} {:>9.3}  {}\n",
                s.name,
                if s.passed { "PASS" } else { "FAIL" },
                s.seconds,
                s.detail
            ));
        }
        out
    }
}

/// Outcome of one suite body: the worst error seen and the allowed maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Check {
    pub worst: f64,
    pub limit: f64,
}

impl Check {
    fn new(limit: f64) -> Self {
        Self { worst: 0.0, limit }
    }

    fn see(&mut self, err: f64) {
        // NaN must fail.
        if err.is_nan() || err > self.worst {
            self.worst = err;
        }
    }

    pub fn passed(&self) -> bool {
        self.worst <= self.limit
    }
}

fn run_suite(name: &str, body: impl FnOnce() -> Result<Check>) -> SuiteResult {
    let start = Instant::now();
    let (passed, detail) = match body() {
        Ok(c) => (c.passed(), format!("max error {:.3e} (limit {:.0e})", c.worst, c.limit)),
        Err(e) => (false, format!("error: {e}")),
    };
    SuiteResult {
        name: name.into(),
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn textured(h: usize, w: usize) -> Image {
    Image::new(h, w, 1, (0..h * w).map(|u| ((u * 37 + 11) % 97) as f64 / 96.0).collect()).unwrap()
}

pub fn alpha_oracle() -> Result<Check> {
    let mut c = Check::new(1e-12);
    for d in 2..=12 {
        for nu in NU_GRID {
            for p in 0..=d {
                for q in 0..=d - p {
                    c.see((alpha_gen(d, p, q, nu)? - alpha_bruteforce(d, p, q, nu)?).abs());
                }
            }
        }
    }
    Ok(c)
}

pub fn sigma_inverse_product() -> Result<Check> {
    let mut c = Check::new(1e-10);
    for d in 2..=50 {
        for nu in [0.25, 1.0, 10.0] {
            let p = sigma_matrix(d, nu)?.matrix().mul(sigma_inverse(d, nu)?.matrix());
            c.see(p.max_abs_diff(&Matrix::identity(d + 1)));
        }
    }
    Ok(c)
}

pub fn useful_equalities(perturbation: f64) -> Result<Check> {
    let mut c = Check::new(1e-12);
    for d in 2..=64 {
        for nu in NU_GRID {
            let mut s = sigma_set(d, nu)?;
            s.sigma2 += perturbation;
            for r in s.identity_residuals() {
                c.see(r.abs());
            }
        }
    }
    Ok(c)
}

pub fn coefficient_bounds() -> Result<Check> {
    // Reports the largest relative violation; zero when every bound holds.
    let mut c = Check::new(0.0);
    for d in 2..=64 {
        for nu in NU_GRID {
            let s = sigma_set(d, nu)?;
            let lo = (-1.0 / (nu * nu)).exp() / 4.0;
            c.see((lo - s.c_d).max(s.c_d - 0.25).max(0.0));
            let bound = 8.0 * d as f64 * (1.0 / (nu * nu)).exp();
            c.see((s.inverse_operator_norm() / bound - 1.0).max(0.0));
        }
    }
    Ok(c)
}

pub fn combinatorial_identity() -> Result<Check> {
    let mut c = Check::new(0.0);
    for d in 1..=25u32 {
        let want = d as u128 * 4u128.pow(d - 1);
        c.see(if combinatorial_v(d)? == want { 0.0 } else { 1.0 });
    }
    Ok(c)
}

pub fn beta_two_paths() -> Result<Check> {
    let mut c = Check::new(1e-10);
    let img = textured(8, 9);
    let part = grid_segment(8, 9, GridParams { rows: 3, cols: 3 })?;
    let bar = compute_replacement(&img, &part, &ReplacementSpec::MeanPerSuperpixel)?;
    let f = Mlp::random(&[72, 6, 1], 1, 2.0)?;
    for nu in NU_GRID {
        let g = moments_exact(&f, &img, &part, &bar, nu)?;
        c.see(beta_from_moments(&g, 9, nu)?.max_abs_diff(&beta_from_moments_matrix(&g, 9, nu)?));
    }
    Ok(c)
}

/// Closed-form shape-detector limit against exact enumeration at d = 12.
pub fn shape_detector_enumeration() -> Result<Check> {
    let mut c = Check::new(1e-12);
    let img = textured(12, 12);
    let part = grid_segment(12, 12, GridParams { rows: 3, cols: 4 })?;
    let bar = compute_replacement(&img, &part, &ReplacementSpec::MeanPerSuperpixel)?;
    let shapes: [&[usize]; 3] = [&[0, 13, 50], &[70, 71, 84, 143], &[5, 40, 100, 130]];
    for shape in shapes {
        for tau in [0.2, 0.5] {
            for nu in [0.25, 1.0, 100.0] {
                let f = ShapeDetector::new(shape.to_vec(), tau)?;
                let g = moments_exact(&f, &img, &part, &bar, nu)?;
                let closed = beta_shape_detector(&part, shape, tau, &img, &bar, nu)?;
                c.see(beta_from_moments(&g, 12, nu)?.max_abs_diff(&closed));
            }
        }
    }
    Ok(c)
}

/// Weighted least squares on the full mask design reproduces the linear limit.
pub fn linear_exactness() -> Result<Check> {
    let mut c = Check::new(1e-10);
    let img = textured(9, 12);
    let part = grid_segment(9, 12, GridParams { rows: 3, cols: 4 })?;
    let bar = compute_replacement(&img, &part, &ReplacementSpec::MeanPerSuperpixel)?;
    let lam: Vec<f64> = (0..108).map(|u| (u as f64 * 0.61).sin()).collect();
    let f = LinearModel::new(lam.clone())?;
    let want = beta_linear(&lam, &img, &bar, &part)?;
    for nu in [0.25, 1.0] {
        let fit = fit_surrogate(&enumerated_batch(&f, &img, &part, &bar, nu)?, 0.0)?;
        c.see(fit.max_abs_diff(&want));
    }
    let total = want.intercept + want.coefficients.iter().sum::<f64>();
    c.see((total - f.evaluate(&img)?).abs());
    Ok(c)
}

pub fn ig_linear_exactness() -> Result<Check> {
    let mut c = Check::new(1e-12);
    let img = textured(9, 12);
    let part = grid_segment(9, 12, GridParams { rows: 3, cols: 4 })?;
    let bar = compute_replacement(&img, &part, &ReplacementSpec::MeanPerSuperpixel)?;
    let lam: Vec<f64> = (0..108).map(|u| (u as f64 * 0.29).cos()).collect();
    let f = LinearModel::new(lam.clone())?;
    let want = beta_linear(&lam, &img, &bar, &part)?;
    for m in [1, 7, 20] {
        let opts = IgOptions {
            m,
            ..IgOptions::default()
        };
        c.see(integrated_gradients_explanation(&f, &img, &bar, &part, &opts)?.max_abs_diff(&want));
    }
    Ok(c)
}

pub fn large_bandwidth_limit() -> Result<Check> {
    let mut c = Check::new(1e-3);
    let img = textured(8, 9);
    let part = grid_segment(8, 9, GridParams { rows: 3, cols: 3 })?;
    let bar = compute_replacement(&img, &part, &ReplacementSpec::MeanPerSuperpixel)?;
    let models: Vec<Box<dyn BlackBoxModel>> = vec![
        Box::new(ShapeDetector::new(vec![3, 30, 60], 0.2)?),
        Box::new(Mlp::random(&[72, 6, 1], 2, 1.0)?),
    ];
    for f in &models {
        let g = moments_exact(f.as_ref(), &img, &part, &bar, 100.0)?;
        let a = beta_from_moments(&g, 9, 100.0)?;
        c.see(a.max_abs_diff(&beta_infinity(f.as_ref(), &img, &part, &bar, Estimator::Exact)?));
    }
    Ok(c)
}

pub fn sample_size_bound() -> Result<Check> {
    let mut c = Check::new(0.0);
    let n = min_sample_size(1.0, 1.0, 0.5, 2, f64::INFINITY)?;
    let want = (2f64.powi(28) * 32f64.ln()).ceil() as u128;
    c.see(n.abs_diff(want) as f64);
    Ok(c)
}

pub fn random_baseline_suite() -> Result<Check> {
    let mut c = Check::new(0.005);
    c.see((random_baseline(60, 5, 100_000, 0) - 0.05).abs());
    Ok(c)
}

/// Runs every suite in a fixed order.
pub fn run_selftest(options: SelftestOptions) -> SelftestReport {
    let suites = vec![
        run_suite("alpha oracle (d <= 12)", alpha_oracle),
        run_suite("sigma inverse (d <= 50)", sigma_inverse_product),
        run_suite("useful equalities", || useful_equalities(options.sigma2_perturbation)),
        run_suite("coefficient bounds", coefficient_bounds),
        run_suite("combinatorial identity", combinatorial_identity),
        run_suite("beta two paths", beta_two_paths),
        run_suite("shape detector (d = 12)", shape_detector_enumeration),
        run_suite("linear exactness", linear_exactness),
        run_suite("ig linear exactness", ig_linear_exactness),
        run_suite("large-bandwidth limit", large_bandwidth_limit),
        run_suite("sample-size bound", sample_size_bound),
        run_suite("random baseline", random_baseline_suite),
    ];
    let all_passed = suites.iter().all(|s| s.passed);
    SelftestReport { suites, all_passed }
}
