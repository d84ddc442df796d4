//! `limexp`: command-line front end for lime-core.
//!
//! Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 selftest failure.

mod args;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::Parser;
use serde::Serialize;

use lime_core::harness::experiment::{comparison_csv, gnuplot_table};
use lime_core::harness::{run_comparison, run_concentration, run_selftest, to_json_string, write_json};
use lime_core::harness::{ExperimentConfig, SelftestOptions};
use lime_core::ig::{approx_explanation, averaged_gradient, IgOptions};
use lime_core::image::{compute_replacement, Image, ReplacementSpec, SuperpixelPartition};
use lime_core::io::{read_image, read_partition, write_partition};
use lime_core::lime::{explain_with_replacement, top_k_positive, ExplanationVector, LimeConfig};
use lime_core::models::{BuiltModel, ModelSpec};
use lime_core::segmentation::{grid_segment, quickshift_segment, GridParams, QuickshiftParams};
use lime_core::theory::{
    beta_from_moments, beta_infinity, beta_linear, beta_shape_detector, min_sample_size, moments_exact,
    moments_monte_carlo, Estimator,
};

use args::*;

const EXIT_INVALID: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_SELFTEST: u8 = 3;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(EXIT_INVALID);
        }
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<lime_core::Error>() {
        Some(inner) if inner.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_INVALID,
    }
}

fn run(cli: &Cli) -> anyhow::Result<u8> {
    match &cli.command {
        Command::Segment(c) => segment(cli, c),
        Command::Explain(c) => explain(cli, c),
        Command::Limit(c) => limit(cli, c),
        Command::Ig(c) => ig(cli, c),
        Command::Compare(c) => compare(cli, c),
        Command::Concentration(c) => concentration(cli, c),
        Command::Selftest(c) => selftest(cli, c),
    }
}

fn out_path(cli: &Cli, name: &str) -> anyhow::Result<Option<PathBuf>> {
    match &cli.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            Ok(Some(dir.join(name)))
        }
        None => Ok(None),
    }
}

/// Prints the report and, with --out-dir, also writes it to `name`.
fn emit<T: Serialize>(cli: &Cli, name: &str, value: &T) -> anyhow::Result<()> {
    let text = to_json_string(value)?;
    if let Some(path) = out_path(cli, name)? {
        std::fs::write(&path, &text)?;
    }
    print!("{text}");
    Ok(())
}

fn segment_image(image: &Image, s: &SegmenterArgs) -> lime_core::Result<SuperpixelPartition> {
    match s.segmenter {
        SegmenterKind::Grid => grid_segment(
            image.height(),
            image.width(),
            GridParams {
                rows: s.rows,
                cols: s.cols,
            },
        ),
        SegmenterKind::Quickshift => quickshift_segment(
            image,
            &QuickshiftParams {
                ratio: s.ratio,
                kernel_size: s.kernel_size,
                max_dist: s.max_dist,
            },
        ),
    }
}

#[derive(Serialize)]
struct SegmentReport {
    d: usize,
    height: usize,
    width: usize,
    partition: String,
}

fn segment(cli: &Cli, c: &SegmentCmd) -> anyhow::Result<u8> {
    let image = read_image(&c.image).with_context(|| format!("reading {}", c.image.display()))?;
    let partition = segment_image(&image, &c.segmenter)?;
    let output = match (&c.output, out_path(cli, "partition.csv")?) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => p,
        (None, None) => return Err(anyhow!(lime_core::Error::InvalidParameter(
            "segment needs --output or --out-dir".into()
        ))),
    };
    write_partition(&partition, &output)?;
    let report = SegmentReport {
        d: partition.d(),
        height: partition.height(),
        width: partition.width(),
        partition: output.display().to_string(),
    };
    print!("{}", to_json_string(&report)?);
    Ok(0)
}

/// Everything the single-image commands need.
struct Loaded {
    image: Image,
    partition: SuperpixelPartition,
    replacement: Image,
    model: BuiltModel,
}

fn replacement_spec(input: &InputArgs, channels: usize) -> lime_core::Result<ReplacementSpec> {
    Ok(match input.replacement {
        ReplacementKind::Mean => ReplacementSpec::MeanPerSuperpixel,
        ReplacementKind::Black => ReplacementSpec::black(channels),
        ReplacementKind::Solid => ReplacementSpec::SolidColor {
            color: input.color.clone().ok_or_else(|| {
                lime_core::Error::InvalidParameter("--replacement solid needs --color".into())
            })?,
        },
    })
}

fn load(input: &InputArgs) -> anyhow::Result<Loaded> {
    let image = read_image(&input.image).with_context(|| format!("reading {}", input.image.display()))?;
    let partition = match &input.partition {
        Some(p) => read_partition(p).with_context(|| format!("reading {}", p.display()))?,
        None => segment_image(&image, &input.segmenter)?,
    };
    partition.check_image(&image)?;
    let replacement = compute_replacement(&image, &partition, &replacement_spec(input, image.channels())?)?;
    let spec =
        ModelSpec::from_json_file(&input.model).with_context(|| format!("reading {}", input.model.display()))?;
    let base = input.model.parent().unwrap_or(Path::new("."));
    let model = spec.build_concrete(image.height(), image.width(), image.channels(), base)?;
    Ok(Loaded {
        image,
        partition,
        replacement,
        model,
    })
}

/// Explanation JSON: intercept, coefficients, 1-based top-k ids, settings.
#[derive(Serialize)]
struct ExplanationReport<'a, C: Serialize> {
    intercept: f64,
    coefficients: &'a [f64],
    top_k: Vec<usize>,
    config: C,
}

fn coefficient_csv(e: &ExplanationVector) -> String {
    let mut out = String::from("index,coefficient\n");
    for (j, v) in e.to_full().iter().enumerate() {
        out.push_str(&format!("{j},{v:.16e}\n"));
    }
    out
}

fn emit_explanation<C: Serialize>(
    cli: &Cli,
    stem: &str,
    e: &ExplanationVector,
    k: usize,
    config: C,
) -> anyhow::Result<()> {
    let report = ExplanationReport {
        intercept: e.intercept,
        coefficients: &e.coefficients,
        top_k: top_k_positive(e, k).iter().map(|j| j + 1).collect(),
        config,
    };
    if let Some(path) = out_path(cli, &format!("{stem}.csv"))? {
        std::fs::write(path, coefficient_csv(e))?;
    }
    emit(cli, &format!("{stem}.json"), &report)
}

fn explain(cli: &Cli, c: &ExplainCmd) -> anyhow::Result<u8> {
    let l = load(&c.input)?;
    let config = LimeConfig {
        n: c.n,
        nu: c.nu,
        lambda: c.lambda,
        seed: cli.seed.unwrap_or(0),
        k: c.k,
        batch_size: c.batch_size,
    };
    let e = explain_with_replacement(&l.image, &l.partition, &l.replacement, l.model.as_model(), &config)?;
    emit_explanation(cli, "explanation", &e, c.k, &config)?;
    Ok(0)
}

#[derive(Serialize)]
struct LimitSettings {
    nu: serde_json::Value,
    estimator: &'static str,
    samples: Option<usize>,
    seed: Option<u64>,
    sample_size_bound: Option<String>,
}

#[derive(Serialize)]
struct LimitReport<'a> {
    intercept: f64,
    coefficients: &'a [f64],
    provenance: lime_core::Provenance,
    config: LimitSettings,
}

fn closed_form(l: &Loaded, nu: f64) -> lime_core::Result<Option<ExplanationVector>> {
    let d = l.partition.d();
    Ok(match &l.model {
        BuiltModel::ShapeDetector(s) => Some(beta_shape_detector(
            &l.partition,
            s.pixels(),
            s.tau(),
            &l.image,
            &l.replacement,
            nu,
        )?),
        BuiltModel::Linear(m) => Some(beta_linear(m.coefficients(), &l.image, &l.replacement, &l.partition)?),
        BuiltModel::Constant(m) => {
            let mut full = vec![0.0; d + 1];
            full[0] = m.value;
            Some(ExplanationVector::from_full(&full, lime_core::Provenance::Limit))
        }
        BuiltModel::Mlp(_) => None,
    })
}

fn limit(cli: &Cli, c: &LimitCmd) -> anyhow::Result<u8> {
    let l = load(&c.input)?;
    l.partition.require_at_least(2)?;
    let d = l.partition.d();
    let seed = cli.seed.unwrap_or(0);
    let model = l.model.as_model();
    let estimator = c.estimator.unwrap_or(match l.model {
        BuiltModel::Mlp(_) => EstimatorKind::Exact,
        _ => EstimatorKind::ClosedForm,
    });
    let e = match estimator {
        EstimatorKind::ClosedForm => closed_form(&l, c.nu)?.ok_or_else(|| {
            lime_core::Error::InvalidParameter("this model has no closed form; use --estimator exact".into())
        })?,
        EstimatorKind::Exact if c.nu.is_infinite() => {
            beta_infinity(model, &l.image, &l.partition, &l.replacement, Estimator::Exact)?
        }
        EstimatorKind::Exact => {
            let g = moments_exact(model, &l.image, &l.partition, &l.replacement, c.nu)?;
            beta_from_moments(&g, d, c.nu)?
        }
        EstimatorKind::MonteCarlo if c.nu.is_infinite() => beta_infinity(
            model,
            &l.image,
            &l.partition,
            &l.replacement,
            Estimator::MonteCarlo { n: c.samples, seed },
        )?,
        EstimatorKind::MonteCarlo => {
            let g = moments_monte_carlo(model, &l.image, &l.partition, &l.replacement, c.nu, c.samples, seed)?;
            beta_from_moments(&g, d, c.nu)?
        }
    };
    let sample_size_bound = match (c.epsilon, c.eta) {
        (Some(eps), Some(eta)) => {
            let m = model.bound().ok_or_else(|| {
                lime_core::Error::InvalidParameter("model has no known bound for the sample-size formula".into())
            })?;
            Some(min_sample_size(m, eps, eta, d, c.nu)?.to_string())
        }
        (None, None) => None,
        _ => {
            return Err(anyhow!(lime_core::Error::InvalidParameter(
                "--epsilon and --eta go together".into()
            )))
        }
    };
    let monte_carlo = estimator == EstimatorKind::MonteCarlo;
    let report = LimitReport {
        intercept: e.intercept,
        coefficients: &e.coefficients,
        provenance: e.provenance,
        config: LimitSettings {
            nu: if c.nu.is_infinite() { "inf".into() } else { c.nu.into() },
            estimator: match estimator {
                EstimatorKind::ClosedForm => "closed-form",
                EstimatorKind::Exact => "exact",
                EstimatorKind::MonteCarlo => "monte-carlo",
            },
            samples: monte_carlo.then_some(c.samples),
            seed: monte_carlo.then_some(seed),
            sample_size_bound,
        },
    };
    emit(cli, "limit.json", &report)?;
    Ok(0)
}

#[derive(Serialize)]
struct IgSettings {
    m: usize,
    finite_difference: bool,
}

fn ig(cli: &Cli, c: &IgCmd) -> anyhow::Result<u8> {
    let l = load(&c.input)?;
    let options = IgOptions {
        m: c.m,
        finite_difference_fallback: c.finite_difference,
    };
    let path = averaged_gradient(l.model.as_model(), &l.image, &l.replacement, &options)?;
    let e = approx_explanation(&path, &l.image, &l.replacement, &l.partition)?;
    if let Some(dump) = &c.dump_ig {
        let row = path.width * path.channels;
        let mut out = String::new();
        for r in path.values.chunks(row) {
            let cells: Vec<String> = r.iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        std::fs::write(dump, out).with_context(|| format!("writing {}", dump.display()))?;
    }
    emit_explanation(
        cli,
        "ig",
        &e,
        c.k,
        IgSettings {
            m: c.m,
            finite_difference: c.finite_difference,
        },
    )?;
    Ok(0)
}

fn experiment_config(cli: &Cli, c: &ExperimentCmd) -> anyhow::Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| lime_core::Error::InvalidParameter("this command needs --config <path>".into()))?;
    let mut config = ExperimentConfig::from_json_file(path)?;
    if let Some(seed) = cli.seed {
        config.lime.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        config.output_dir = Some(dir.clone());
    }
    if let Some(n) = c.n {
        config.lime.n = n;
    }
    if let Some(r) = c.repetitions {
        config.repetitions = r;
    }
    Ok(config)
}

fn output_dir(config: &ExperimentConfig) -> anyhow::Result<Option<PathBuf>> {
    match &config.output_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Ok(Some(dir.clone()))
        }
        None => Ok(None),
    }
}

#[derive(Serialize)]
struct Summary<'a, T: Serialize> {
    images_ok: usize,
    images_failed: usize,
    aggregate: &'a T,
}

fn compare(cli: &Cli, c: &ExperimentCmd) -> anyhow::Result<u8> {
    let config = experiment_config(cli, c)?;
    let report = run_comparison(&config)?;
    if let Some(dir) = output_dir(&config)? {
        write_json(dir.join("comparison.json"), &report)?;
        std::fs::write(dir.join("comparison_coefficients.csv"), comparison_csv(&report))?;
    }
    for img in report.images.iter().filter(|i| i.failure.is_some()) {
        eprintln!("image {} ({}) failed: {}", img.index, img.name, img.failure.as_deref().unwrap_or(""));
    }
    print!(
        "{}",
        to_json_string(&Summary {
            images_ok: report.aggregate.images_ok,
            images_failed: report.aggregate.images_failed,
            aggregate: &report.aggregate,
        })?
    );
    if report.aggregate.images_ok == 0 {
        return Err(anyhow!(lime_core::Error::InvalidParameter("every image failed".into())));
    }
    Ok(0)
}

fn concentration(cli: &Cli, c: &ExperimentCmd) -> anyhow::Result<u8> {
    let config = experiment_config(cli, c)?;
    let report = run_concentration(&config)?;
    if let Some(dir) = output_dir(&config)? {
        write_json(dir.join("concentration.json"), &report)?;
        for img in &report.images {
            std::fs::write(dir.join(format!("concentration_{}.dat", img.index)), gnuplot_table(img))?;
        }
    }
    #[derive(Serialize)]
    struct ImageSummary<'a, S: Serialize> {
        name: &'a str,
        summary: &'a S,
    }
    let summaries: Vec<_> = report
        .images
        .iter()
        .map(|i| ImageSummary {
            name: &i.name,
            summary: &i.summary,
        })
        .collect();
    print!("{}", to_json_string(&summaries)?);
    Ok(0)
}

fn selftest(cli: &Cli, c: &SelftestCmd) -> anyhow::Result<u8> {
    let report = run_selftest(SelftestOptions {
        sigma2_perturbation: c.perturb_sigma2,
    });
    print!("{}", report.table());
    if let Some(path) = out_path(cli, "selftest.json")? {
        write_json(path, &report)?;
    }
    Ok(if report.all_passed { 0 } else { EXIT_SELFTEST })
}
